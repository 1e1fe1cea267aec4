#include "conftune/cli.hpp"

int main(int argc, char** argv) { return conftune::cli::run(argc, argv); }

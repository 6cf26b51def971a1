#include "cli.hpp"

int main(int argc, char** argv) { return vfrpool::cli::run(argc, argv, {std::cout, std::cerr}); }

#include "stochlq/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return stochlq::run_cli(argc, argv, std::cout, std::cerr); }

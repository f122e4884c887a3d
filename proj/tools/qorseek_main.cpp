#include <iostream>

#include "qorseek/commands.hpp"

int main(int argc, char** argv) { return qorseek::run_cli(argc, argv, std::cout, std::cerr); }

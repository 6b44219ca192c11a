#include <iostream>

#include "adaptexp/harness.hpp"

int main(int argc, char** argv) { return adaptexp::cli_main(argc, argv, std::cout, std::cerr); }

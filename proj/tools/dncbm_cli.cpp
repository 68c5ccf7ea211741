#include <iostream>

#include "dncbm/pipeline.hpp"

int main(int argc, char** argv) { return dncbm::pipeline::run_cli(argc, argv, std::cout, std::cerr); }

#include "cpmle/cli.hpp"

int main(int argc, char** argv) { return cpmle::run_cli(argc, argv); }

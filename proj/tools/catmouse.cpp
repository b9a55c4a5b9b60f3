#include "catmouse/cli.hpp"

int main(int argc, char** argv) { return catmouse::run_cli(argc, argv); }

#include "blindrep/cli.hpp"

int main(int argc, char** argv) { return blindrep::run_cli(argc, argv); }

#include "fndclip/cli.hpp"

int main(int argc, char** argv) { return fndclip::run_cli(argc, argv); }

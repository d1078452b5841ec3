#include "confcorr/cli.hpp"

int main(int argc, char** argv) { return confcorr::run_cli(argc, argv); }

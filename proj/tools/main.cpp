#include "gsalign/cli.hpp"

int main(int argc, char** argv) { return gsalign::cli(argc, argv); }

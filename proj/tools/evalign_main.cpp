#include "evalign/harness.hpp"

int main(int argc, char** argv) { return evalign::cli_main(argc, argv); }

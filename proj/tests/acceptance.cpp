#include "blindrep/blindrep.hpp"
int main() { return 0; }

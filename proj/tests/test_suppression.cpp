#include <catch2/catch_amalgamated.hpp>
#include "blindrep/blindrep.hpp"
TEST_CASE("placeholder test_suppression") { CHECK(true); }

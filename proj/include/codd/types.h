#pragma once

#include <cstdint>
#include <vector>

namespace codd {

using Token = std::int32_t;
using TokenVector = std::vector<Token>;

}  // namespace codd

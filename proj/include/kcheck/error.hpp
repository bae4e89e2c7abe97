#pragma once

#include <stdexcept>
#include <string>

namespace kcheck {

// Raised for every contract violation and numerical failure in the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace kcheck

#pragma once

#include "error.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace kcheck {

/// Named numeric columns of equal length.
class Table {
public:
    Table() = default;

    void add(std::string name, std::vector<double> values) {
        if (!columns_.empty() && values.size() != rows()) {
            throw Error("column '" + name + "' has a different length");
        }
        if (has(name)) {
            throw Error("duplicate column '" + name + "'");
        }
        names_.push_back(std::move(name));
        columns_.push_back(std::move(values));
    }

    bool has(const std::string& name) const {
        return std::find(names_.begin(), names_.end(), name) != names_.end();
    }

    std::span<const double> column(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) {
            throw Error("missing column '" + name + "'");
        }
        return columns_[static_cast<std::size_t>(it - names_.begin())];
    }

    std::vector<double>& mutable_column(const std::string& name) {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) {
            throw Error("missing column '" + name + "'");
        }
        return columns_[static_cast<std::size_t>(it - names_.begin())];
    }

    const std::vector<std::string>& names() const { return names_; }
    std::size_t rows() const { return columns_.empty() ? 0 : columns_.front().size(); }
    std::size_t cols() const { return columns_.size(); }

    friend bool operator==(const Table&, const Table&) = default;

private:
    std::vector<std::string> names_;
    std::vector<std::vector<double>> columns_;
};

} // namespace kcheck

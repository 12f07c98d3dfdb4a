#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "winq/errors.hpp"
#include "winq/tensor.hpp"

namespace winq {

// Flat view of all trainable values with a name -> slice map back to tensors.
// Slices are disjoint, contiguous, and cover the flat array exactly.
class ParamVector {
public:
    struct Entry {
        std::string name;
        std::size_t offset = 0;
        std::size_t length = 0;
        Shape shape;
        bool quantized = false;   // subject to weight quantization
        bool step_size = false;   // learnable quantization step, owned by a quantizer
    };

    std::size_t size() const { return data_.size(); }
    std::size_t entry_count() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    const Entry& entry(std::size_t i) const { return entries_[i]; }

    std::size_t add(const std::string& name, const Shape& shape, bool quantized,
                    bool step_size = false) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Entry e;
        e.name = name;
        e.offset = data_.size();
        e.length = shape_numel(shape);
        e.shape = shape;
        e.quantized = quantized;
        e.step_size = step_size;
        index_[name] = entries_.size();
        entries_.push_back(e);
        data_.resize(data_.size() + e.length, 0.0);
        return entries_.size() - 1;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Entry& find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[it->second];
    }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    std::span<double> slice(const Entry& e) { return {data_.data() + e.offset, e.length}; }
    std::span<const double> slice(const Entry& e) const {
        return {data_.data() + e.offset, e.length};
    }
    std::span<double> slice(const std::string& name) { return slice(find(name)); }
    std::span<const double> slice(const std::string& name) const { return slice(find(name)); }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    std::vector<Entry> entries_;
    std::vector<double> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace winq

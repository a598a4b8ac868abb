#pragma once

#include <string>
#include <type_traits>
#include <vector>

#include "ammu/fixture.hpp"
#include "ammu/model.hpp"

namespace ammu {

/// Checkpoints are named tensor fixtures, one record per parameter in schema
/// order, so files round-trip bit-exactly and stay diffable.
template <typename T>
void save_params(const ParamSet<T>& ps, const std::string& path) {
    std::vector<fixture::TensorRecord> records;
    records.reserve(ps.values.size());
    for (std::size_t i = 0; i < ps.values.size(); ++i) {
        records.push_back(fixture::record_of(ps.names[i], ps.values[i]));
    }
    fixture::write_file(path, records);
}

template <typename T>
ParamSet<T> load_params(const std::string& path) {
    ParamSet<T> ps;
    for (const fixture::TensorRecord& r : fixture::read_file(path)) {
        if constexpr (std::is_same_v<T, double>) {
            ps.add(r.name, r.as_f64());
        } else {
            ps.add(r.name, r.as_f32());
        }
    }
    return ps;
}

}  // namespace ammu

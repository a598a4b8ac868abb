#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ammu/tensor.hpp"

namespace ammu::fixture {

/// One named tensor from a fixture document. Values are held as doubles;
/// f32 payloads are exactly representable there, so no precision is lost in
/// either direction.
struct TensorRecord {
    std::string name;
    std::string dtype;  // "f32" or "f64"
    Shape shape;
    std::vector<double> values;

    Tensor<double> as_f64() const;
    Tensor<float> as_f32() const;
};

TensorRecord record_of(const std::string& name, const Tensor<double>& t);
TensorRecord record_of(const std::string& name, const Tensor<float>& t);

/// Text format, one document per stream:
///   ammu.tensors.v1
///   tensor NAME DTYPE RANK D0 D1 ...
///   v v v v v v v v
///   ...
/// Values are printed with enough digits to round-trip their dtype bit-exactly.
void write_records(std::ostream& os, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> read_records(std::istream& is);

void write_file(const std::string& path, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> read_file(const std::string& path);

}  // namespace ammu::fixture

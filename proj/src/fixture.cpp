#include "ammu/fixture.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ammu::fixture {

namespace {

constexpr const char* kMagic = "ammu.tensors.v1";
constexpr int kValuesPerLine = 8;

[[noreturn]] void fail(const std::string& what) {
    throw std::runtime_error("fixture: " + what);
}

void check_dtype(const std::string& dtype) {
    if (dtype != "f32" && dtype != "f64") fail("unknown dtype '" + dtype + "'");
}

}  // namespace

Tensor<double> TensorRecord::as_f64() const {
    if (dtype != "f64") fail("record '" + name + "' holds " + dtype + ", not f64");
    return Tensor<double>(shape, values);
}

Tensor<float> TensorRecord::as_f32() const {
    if (dtype != "f32") fail("record '" + name + "' holds " + dtype + ", not f32");
    std::vector<float> data(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) data[i] = static_cast<float>(values[i]);
    return Tensor<float>(shape, std::move(data));
}

TensorRecord record_of(const std::string& name, const Tensor<double>& t) {
    return TensorRecord{name, "f64", t.shape(), t.vec()};
}

TensorRecord record_of(const std::string& name, const Tensor<float>& t) {
    std::vector<double> values(t.vec().begin(), t.vec().end());
    return TensorRecord{name, "f32", t.shape(), std::move(values)};
}

void write_records(std::ostream& os, const std::vector<TensorRecord>& records) {
    os << kMagic << '\n';
    char buf[64];
    for (const TensorRecord& rec : records) {
        if (rec.name.empty() || rec.name.find_first_of(" \t\n") != std::string::npos) {
            fail("tensor name '" + rec.name + "' must be non-empty and without whitespace");
        }
        check_dtype(rec.dtype);
        if (shape_numel(rec.shape) != static_cast<std::int64_t>(rec.values.size())) {
            fail("record '" + rec.name + "' value count does not match shape");
        }
        os << "tensor " << rec.name << ' ' << rec.dtype << ' ' << rec.shape.size();
        for (std::int64_t d : rec.shape) os << ' ' << d;
        os << '\n';
        for (std::size_t i = 0; i < rec.values.size(); ++i) {
            if (rec.dtype == "f64") {
                std::snprintf(buf, sizeof buf, "%.17g", rec.values[i]);
            } else {
                std::snprintf(buf, sizeof buf, "%.9g", static_cast<float>(rec.values[i]));
            }
            os << buf;
            const bool line_end = (i + 1) % kValuesPerLine == 0 || i + 1 == rec.values.size();
            os << (line_end ? '\n' : ' ');
        }
    }
    if (!os) fail("write failed");
}

std::vector<TensorRecord> read_records(std::istream& is) {
    std::string magic;
    if (!(is >> magic) || magic != kMagic) fail("missing or wrong magic line");
    std::vector<TensorRecord> records;
    std::string word;
    while (is >> word) {
        if (word != "tensor") fail("expected 'tensor', got '" + word + "'");
        TensorRecord rec;
        std::size_t rank = 0;
        if (!(is >> rec.name >> rec.dtype >> rank)) fail("truncated tensor header");
        check_dtype(rec.dtype);
        rec.shape.resize(rank);
        for (std::size_t i = 0; i < rank; ++i) {
            if (!(is >> rec.shape[i])) fail("truncated shape in '" + rec.name + "'");
        }
        const std::int64_t count = shape_numel(rec.shape);
        rec.values.resize(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) {
            if (rec.dtype == "f64") {
                if (!(is >> rec.values[static_cast<std::size_t>(i)])) {
                    fail("truncated values in '" + rec.name + "'");
                }
            } else {
                float v;
                if (!(is >> v)) fail("truncated values in '" + rec.name + "'");
                rec.values[static_cast<std::size_t>(i)] = static_cast<double>(v);
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void write_file(const std::string& path, const std::vector<TensorRecord>& records) {
    std::ofstream os(path);
    if (!os) fail("cannot open '" + path + "' for writing");
    write_records(os, records);
}

std::vector<TensorRecord> read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail("cannot open '" + path + "' for reading");
    return read_records(is);
}

}  // namespace ammu::fixture

#pragma once

// Flat binary parameter snapshot.
//
//   header:  magic "HCPARAMS" (8 bytes) | version u32 | count u64
//   record:  name_len u32 | name bytes | rank u32 | extents u64[rank] | data f64[numel]
//
// All integers and floats are little-endian.

#include <filesystem>
#include <string>
#include <vector>

#include "hypercast/autodiff.hpp"

namespace hypercast::ad {

inline constexpr char kSnapshotMagic[8] = {'H', 'C', 'P', 'A', 'R', 'A', 'M', 'S'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

struct SnapshotRecord {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

class SnapshotError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<char> encode_snapshot(const ParameterSet& params);
std::vector<SnapshotRecord> decode_snapshot(const std::vector<char>& bytes);

void save_snapshot(const ParameterSet& params, const std::filesystem::path& path);
std::vector<SnapshotRecord> read_snapshot(const std::filesystem::path& path);

// Copies snapshot values into `params`. Every parameter must be present with
// the same shape and no extra records are allowed; the error names the first
// offending parameter.
void load_snapshot(ParameterSet& params, const std::vector<SnapshotRecord>& records);

}  // namespace hypercast::ad

#pragma once

#include "attnsink/block.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnsink {

// ATND layout (little endian):
//   "ATND" | u16 version (=1) | u8 endianness (0 = little) | u8 dtype (0 = f32, 1 = f64) | u32 record count
//   per record: u32 name length | UTF-8 name | u8 ndim | u64 dims[ndim] | raw row-major payload
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

enum class DumpErrc {
    Io = 10,
    BadMagic = 11,
    BadVersion = 12,
    BadFlags = 13,
    Truncated = 14,
    DuplicateName = 15,
    Inconsistent = 16,
    MissingRecord = 17,
};

class DumpError : public std::runtime_error {
public:
    DumpError(DumpErrc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    DumpErrc code() const { return code_; }

private:
    DumpErrc code_;
};

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;  // row-major

    std::uint64_t numel() const;
};

struct DumpRecord {
    std::string name;
    Tensor tensor;
};

struct DumpFile {
    std::uint16_t version = 1;
    DType dtype = DType::F64;
    std::vector<DumpRecord> records;
};

void write_dump(const std::string& path, const DumpFile& file);
DumpFile read_dump(const std::string& path);

// Scans headers only; payloads are read on demand.
class DumpReader {
public:
    explicit DumpReader(const std::string& path);

    struct Entry {
        std::string name;
        std::vector<std::uint64_t> dims;
        std::uint64_t offset = 0;  // payload offset
    };
    const std::vector<Entry>& entries() const { return entries_; }
    DType dtype() const { return dtype_; }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor load(const std::string& name);

private:
    std::ifstream in_;
    DType dtype_ = DType::F64;
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

Tensor tensor_from_matrix(const Matrix& m);
Matrix matrix_from_tensor(const Tensor& t);  // 2-d tensors only

// "L{layer}.H{head}.{kind}"
std::string head_record_name(int layer, int head, const std::string& kind);
bool parse_head_record_name(const std::string& name, int& layer, int& head, std::string& kind);

// A is [n, T+1, T+1] or [T+1, T+1]; Z is [n, T+1, d] or [T+1, d] (token-major rows).
struct HeadDump {
    int layer = 0, head = 0;
    std::vector<AttentionMap> attn;
    std::vector<TokenMatrix> z;  // d x (T+1)
    std::optional<Matrix> wq, wk, wv, wo;
};

std::vector<std::pair<int, int>> list_heads(const DumpReader& rd);
HeadDump load_head(DumpReader& rd, int layer, int head, bool validate_attn = true);

}  // namespace attnsink

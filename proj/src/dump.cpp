#include "attnsink/dump.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <regex>
#include <set>

namespace attnsink {

namespace {

static_assert(std::endian::native == std::endian::little, "ATND I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
        throw DumpError(DumpErrc::Truncated, std::string("truncated dump while reading ") + what);
    return v;
}

size_t elem_size(DType t) { return t == DType::F32 ? 4 : 8; }

}  // namespace

std::uint64_t Tensor::numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void write_dump(const std::string& path, const DumpFile& file) {
    std::set<std::string> names;
    for (const auto& r : file.records) {
        if (!names.insert(r.name).second) throw DumpError(DumpErrc::DuplicateName, "duplicate record name " + r.name);
        if (r.tensor.dims.size() > 255) throw DumpError(DumpErrc::Inconsistent, "too many dims in " + r.name);
        if (r.tensor.numel() != r.tensor.data.size())
            throw DumpError(DumpErrc::Inconsistent, "payload size does not match dims in " + r.name);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DumpError(DumpErrc::Io, "cannot open " + path + " for writing");
    os.write("ATND", 4);
    put<std::uint16_t>(os, 1);
    put<std::uint8_t>(os, 0);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(file.dtype));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(file.records.size()));
    for (const auto& r : file.records) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put<std::uint8_t>(os, static_cast<std::uint8_t>(r.tensor.dims.size()));
        for (auto d : r.tensor.dims) put<std::uint64_t>(os, d);
        if (file.dtype == DType::F64) {
            os.write(reinterpret_cast<const char*>(r.tensor.data.data()),
                     static_cast<std::streamsize>(r.tensor.data.size() * sizeof(double)));
        } else {
            std::vector<float> buf(r.tensor.data.begin(), r.tensor.data.end());
            os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
    }
    if (!os) throw DumpError(DumpErrc::Io, "write failed for " + path);
}

DumpReader::DumpReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw DumpError(DumpErrc::Io, "cannot open " + path);
    in_.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0);
    char magic[4] = {};
    in_.read(magic, 4);
    if (in_.gcount() != 4) throw DumpError(DumpErrc::Truncated, "truncated dump header");
    if (std::memcmp(magic, "ATND", 4) != 0) throw DumpError(DumpErrc::BadMagic, "not an ATND file: " + path);
    auto version = get<std::uint16_t>(in_, "version");
    if (version != 1) throw DumpError(DumpErrc::BadVersion, "unsupported ATND version " + std::to_string(version));
    auto endian = get<std::uint8_t>(in_, "endianness");
    auto dtype = get<std::uint8_t>(in_, "dtype");
    if (endian != 0 || dtype > 1) throw DumpError(DumpErrc::BadFlags, "unsupported endianness or dtype flag");
    dtype_ = static_cast<DType>(dtype);
    auto count = get<std::uint32_t>(in_, "record count");
    for (std::uint32_t r = 0; r < count; ++r) {
        Entry e;
        auto len = get<std::uint32_t>(in_, "name length");
        if (static_cast<std::uint64_t>(in_.tellg()) + len > size) throw DumpError(DumpErrc::Truncated, "truncated record name");
        e.name.resize(len);
        in_.read(e.name.data(), len);
        auto ndim = get<std::uint8_t>(in_, "ndim");
        std::uint64_t n = 1;
        for (int k = 0; k < ndim; ++k) {
            e.dims.push_back(get<std::uint64_t>(in_, "dims"));
            n *= e.dims.back();
        }
        e.offset = static_cast<std::uint64_t>(in_.tellg());
        const std::uint64_t bytes = n * elem_size(dtype_);
        if (e.offset + bytes > size) throw DumpError(DumpErrc::Truncated, "truncated payload for " + e.name);
        if (index_.count(e.name)) throw DumpError(DumpErrc::DuplicateName, "duplicate record name " + e.name);
        index_[e.name] = entries_.size();
        entries_.push_back(e);
        in_.seekg(static_cast<std::streamoff>(e.offset + bytes));
    }
}

Tensor DumpReader::load(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DumpError(DumpErrc::MissingRecord, "no record named " + name);
    const Entry& e = entries_[it->second];
    Tensor t;
    t.dims = e.dims;
    const std::uint64_t n = t.numel();
    t.data.resize(n);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(e.offset));
    if (dtype_ == DType::F64) {
        in_.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * 8));
    } else {
        std::vector<float> buf(n);
        in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
        std::copy(buf.begin(), buf.end(), t.data.begin());
    }
    if (!in_) throw DumpError(DumpErrc::Truncated, "truncated payload for " + name);
    return t;
}

DumpFile read_dump(const std::string& path) {
    DumpReader rd(path);
    DumpFile f;
    f.dtype = rd.dtype();
    for (const auto& e : rd.entries()) f.records.push_back({e.name, rd.load(e.name)});
    return f;
}

Tensor tensor_from_matrix(const Matrix& m) {
    Tensor t;
    t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.data.resize(static_cast<size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data.data(), m.rows(), m.cols()) = m;
    return t;
}

Matrix matrix_from_tensor(const Tensor& t) {
    if (t.dims.size() != 2) throw DumpError(DumpErrc::Inconsistent, "expected a 2-d tensor");
    const auto r = static_cast<Eigen::Index>(t.dims[0]), c = static_cast<Eigen::Index>(t.dims[1]);
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data.data(), r, c);
}

std::string head_record_name(int layer, int head, const std::string& kind) {
    return "L" + std::to_string(layer) + ".H" + std::to_string(head) + "." + kind;
}

bool parse_head_record_name(const std::string& name, int& layer, int& head, std::string& kind) {
    static const std::regex re(R"(^L(\d+)\.H(\d+)\.(\w+)$)");
    std::smatch m;
    if (!std::regex_match(name, m, re)) return false;
    layer = std::stoi(m[1]);
    head = std::stoi(m[2]);
    kind = m[3];
    return true;
}

std::vector<std::pair<int, int>> list_heads(const DumpReader& rd) {
    std::set<std::pair<int, int>> heads;
    for (const auto& e : rd.entries()) {
        int l = 0, h = 0;
        std::string kind;
        if (parse_head_record_name(e.name, l, h, kind)) heads.insert({l, h});
    }
    return {heads.begin(), heads.end()};
}

namespace {

std::vector<Matrix> split_batch(const Tensor& t, const std::string& name) {
    std::vector<Matrix> out;
    if (t.dims.size() == 2) {
        out.push_back(matrix_from_tensor(t));
    } else if (t.dims.size() == 3) {
        const auto n = t.dims[0], r = t.dims[1], c = t.dims[2];
        for (std::uint64_t b = 0; b < n; ++b) {
            Tensor s;
            s.dims = {r, c};
            s.data.assign(t.data.begin() + static_cast<std::ptrdiff_t>(b * r * c),
                          t.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * r * c));
            out.push_back(matrix_from_tensor(s));
        }
    } else {
        throw DumpError(DumpErrc::Inconsistent, name + ": expected 2 or 3 dims");
    }
    return out;
}

}  // namespace

HeadDump load_head(DumpReader& rd, int layer, int head, bool validate_attn) {
    HeadDump hd;
    hd.layer = layer;
    hd.head = head;
    auto name = [&](const char* k) { return head_record_name(layer, head, k); };
    if (rd.contains(name("A"))) {
        for (auto& a : split_batch(rd.load(name("A")), name("A"))) {
            if (validate_attn) {
                // dumped rows only sum to 1 within float precision
                for (Eigen::Index i = 0; i < a.rows(); ++i) {
                    const double sum = a.row(i).sum();
                    if (std::abs(sum - 1.0) > 1e-4)
                        throw DumpError(DumpErrc::Inconsistent, name("A") + ": row " + std::to_string(i) + " does not sum to 1");
                    a.row(i) /= sum;
                }
                try {
                    hd.attn.emplace_back(std::move(a));
                } catch (const InputError& e) {
                    throw DumpError(DumpErrc::Inconsistent, name("A") + ": " + e.what());
                }
            } else {
                hd.attn.push_back(AttentionMap::unchecked(std::move(a)));
            }
        }
    }
    if (rd.contains(name("Z")))
        for (auto& z : split_batch(rd.load(name("Z")), name("Z"))) hd.z.push_back(z.transpose());
    if (rd.contains(name("Wq"))) hd.wq = matrix_from_tensor(rd.load(name("Wq")));
    if (rd.contains(name("Wk"))) hd.wk = matrix_from_tensor(rd.load(name("Wk")));
    if (rd.contains(name("Wv"))) hd.wv = matrix_from_tensor(rd.load(name("Wv")));
    if (rd.contains(name("Wo"))) hd.wo = matrix_from_tensor(rd.load(name("Wo")));
    if (hd.attn.empty() && hd.z.empty())
        throw DumpError(DumpErrc::MissingRecord, "no A or Z record for " + name("*"));
    if (!hd.attn.empty() && !hd.z.empty() && hd.attn.size() != hd.z.size())
        throw DumpError(DumpErrc::Inconsistent, "A and Z batch sizes differ for " + name("*"));
    return hd;
}

}  // namespace attnsink

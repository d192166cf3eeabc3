#pragma once

#include "reenact/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace reenact {

/// Malformed or missing input files; the CLI maps it to the data error category.
class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Writes bytes to a sibling temporary file, then renames it over the destination.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/**
 * Named-array container used for checkpoints. Arrays keep their dtype and dims and
 * round-trip bit-exactly. Layout: magic "RNCK", u32 version, u32 count, then per
 * entry u32 name length, name, u8 dtype, u8 rank, i64 dims[rank], u64 byte count, bytes.
 */
class Archive
{
public:
    static constexpr std::uint32_t kVersion = 1;

    enum class DType : std::uint8_t { F32 = 1, F64 = 2, I64 = 3, Bytes = 4 };

    struct Entry
    {
        DType dtype = DType::Bytes;
        std::vector<std::int64_t> dims;
        std::string bytes;
    };

    void put(const std::string& name, const TensorF& t);
    void put(const std::string& name, const TensorD& t);
    void put(const std::string& name, const Eigen::MatrixXd& m);
    void put_int(const std::string& name, std::int64_t v);
    void put_double(const std::string& name, double v);
    void put_string(const std::string& name, const std::string& s);

    bool contains(const std::string& name) const { return entries_.count(name) > 0; }
    const Entry& entry(const std::string& name) const;
    TensorF get_tensor_f(const std::string& name) const;
    TensorD get_tensor_d(const std::string& name) const;
    Eigen::MatrixXd get_matrix(const std::string& name) const;
    std::int64_t get_int(const std::string& name) const;
    double get_double(const std::string& name) const;
    std::string get_string(const std::string& name) const;

    const std::map<std::string, Entry>& entries() const { return entries_; }

    std::string serialize() const;
    static Archive deserialize(const std::string& bytes);
    void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }
    static Archive load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

private:
    std::map<std::string, Entry> entries_;
};

/// 8-bit RGB PNG of sample `index` of an (N, 3, H, W) tensor mapped from [lo, hi].
void write_png(const std::filesystem::path& path, const TensorF& images, int index = 0, float lo = -1.f, float hi = 1.f);
/// Reads an 8-bit RGB(A) or grey PNG into (1, 3, H, W) mapped to [lo, hi].
TensorF read_png(const std::filesystem::path& path, float lo = -1.f, float hi = 1.f);

/// Tiles equally sized (1, 3, H, W) images into a rows x cols mosaic with a 1 px border.
TensorF tile_grid(const std::vector<TensorF>& images, int cols, float border = 1.f);

/// Rounds values in [-1, 1] to the nearest 8-bit level so PNG storage is lossless.
void quantize_8bit(TensorF& images);

} // namespace reenact

#include "reenact/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace reenact {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& bytes)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        if (!out) throw DataError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

template <typename T>
void append(std::string& out, const T& v)
{
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader
{
public:
    explicit Reader(const std::string& s) : s_(s) {}

    template <typename T>
    T take()
    {
        T v;
        need(sizeof(T));
        std::memcpy(&v, s_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string take_bytes(std::size_t n)
    {
        need(n);
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    bool done() const { return pos_ == s_.size(); }

private:
    void need(std::size_t n) const
    {
        if (n > s_.size() - pos_) throw DataError("archive truncated");
    }
    const std::string& s_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'R', 'N', 'C', 'K'};

template <typename Scalar>
Archive::Entry tensor_entry(const Tensor<Scalar>& t, Archive::DType dtype)
{
    Archive::Entry e;
    e.dtype = dtype;
    e.dims = {t.shape().n, t.shape().c, t.shape().h, t.shape().w};
    e.bytes.assign(reinterpret_cast<const char*>(t.data()), std::size_t(t.size()) * sizeof(Scalar));
    return e;
}

template <typename Scalar>
Tensor<Scalar> entry_tensor(const Archive::Entry& e, Archive::DType dtype, const std::string& name)
{
    if (e.dtype != dtype || e.dims.size() != 4) throw DataError("archive entry " + name + " has the wrong type");
    Tensor<Scalar> t(Shape{int(e.dims[0]), int(e.dims[1]), int(e.dims[2]), int(e.dims[3])});
    if (e.bytes.size() != std::size_t(t.size()) * sizeof(Scalar)) throw DataError("archive entry " + name + " size");
    std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
    return t;
}

} // namespace

void Archive::put(const std::string& name, const TensorF& t) { entries_[name] = tensor_entry(t, DType::F32); }
void Archive::put(const std::string& name, const TensorD& t) { entries_[name] = tensor_entry(t, DType::F64); }

void Archive::put(const std::string& name, const Eigen::MatrixXd& m)
{
    Entry e;
    e.dtype = DType::F64;
    e.dims = {m.rows(), m.cols()};
    e.bytes.assign(reinterpret_cast<const char*>(m.data()), std::size_t(m.size()) * sizeof(double));
    entries_[name] = std::move(e);
}

void Archive::put_int(const std::string& name, std::int64_t v)
{
    Entry e;
    e.dtype = DType::I64;
    e.dims = {1};
    append(e.bytes, v);
    entries_[name] = std::move(e);
}

void Archive::put_double(const std::string& name, double v) { put(name, Eigen::MatrixXd::Constant(1, 1, v)); }

void Archive::put_string(const std::string& name, const std::string& s)
{
    Entry e;
    e.dtype = DType::Bytes;
    e.dims = {std::int64_t(s.size())};
    e.bytes = s;
    entries_[name] = std::move(e);
}

const Archive::Entry& Archive::entry(const std::string& name) const
{
    auto it = entries_.find(name);
    if (it == entries_.end()) throw DataError("archive has no entry " + name);
    return it->second;
}

TensorF Archive::get_tensor_f(const std::string& name) const { return entry_tensor<float>(entry(name), DType::F32, name); }
TensorD Archive::get_tensor_d(const std::string& name) const { return entry_tensor<double>(entry(name), DType::F64, name); }

Eigen::MatrixXd Archive::get_matrix(const std::string& name) const
{
    const Entry& e = entry(name);
    if (e.dtype != DType::F64 || e.dims.size() != 2) throw DataError("archive entry " + name + " is not a matrix");
    Eigen::MatrixXd m(e.dims[0], e.dims[1]);
    if (e.bytes.size() != std::size_t(m.size()) * sizeof(double)) throw DataError("archive entry " + name + " size");
    std::memcpy(m.data(), e.bytes.data(), e.bytes.size());
    return m;
}

std::int64_t Archive::get_int(const std::string& name) const
{
    const Entry& e = entry(name);
    if (e.dtype != DType::I64 || e.bytes.size() != sizeof(std::int64_t)) throw DataError("archive entry " + name);
    std::int64_t v;
    std::memcpy(&v, e.bytes.data(), sizeof v);
    return v;
}

double Archive::get_double(const std::string& name) const
{
    const auto m = get_matrix(name);
    if (m.size() != 1) throw DataError("archive entry " + name + " is not a scalar");
    return m(0, 0);
}

std::string Archive::get_string(const std::string& name) const
{
    const Entry& e = entry(name);
    if (e.dtype != DType::Bytes) throw DataError("archive entry " + name + " is not a string");
    return e.bytes;
}

std::string Archive::serialize() const
{
    std::string out(kMagic, 4);
    append(out, kVersion);
    append(out, std::uint32_t(entries_.size()));
    for (const auto& [name, e] : entries_) {
        append(out, std::uint32_t(name.size()));
        out += name;
        append(out, std::uint8_t(e.dtype));
        append(out, std::uint8_t(e.dims.size()));
        for (auto d : e.dims) append(out, d);
        append(out, std::uint64_t(e.bytes.size()));
        out += e.bytes;
    }
    return out;
}

Archive Archive::deserialize(const std::string& bytes)
{
    Reader r(bytes);
    if (r.take_bytes(4) != std::string(kMagic, 4)) throw DataError("not a checkpoint archive");
    const auto version = r.take<std::uint32_t>();
    if (version != kVersion) throw DataError("unsupported archive version " + std::to_string(version));
    const auto count = r.take<std::uint32_t>();
    Archive a;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.take<std::uint32_t>();
        std::string name = r.take_bytes(len);
        Entry e;
        e.dtype = DType(r.take<std::uint8_t>());
        const auto rank = r.take<std::uint8_t>();
        for (int k = 0; k < rank; ++k) e.dims.push_back(r.take<std::int64_t>());
        e.bytes = r.take_bytes(r.take<std::uint64_t>());
        a.entries_[std::move(name)] = std::move(e);
    }
    if (!r.done()) throw DataError("trailing bytes in archive");
    return a;
}

namespace {

int to_level(float v, float lo, float hi)
{
    const float u = (v - lo) / (hi - lo) * 255.f;
    return std::clamp(int(std::lround(u)), 0, 255);
}

float from_level(int k, float lo, float hi) { return lo + (hi - lo) * (float(k) / 255.f); }

struct FileCloser
{
    void operator()(std::FILE* f) const
    {
        if (f) std::fclose(f);
    }
};

} // namespace

void write_png(const fs::path& path, const TensorF& images, int index, float lo, float hi)
{
    const Shape s = images.shape();
    if (s.c != 3 || index < 0 || index >= s.n) throw ShapeError("write_png: expected (N, 3, H, W) " + s.str());
    std::vector<png_byte> rows(std::size_t(s.h) * s.w * 3);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < 3; ++c) rows[(std::size_t(y) * s.w + x) * 3 + c] = png_byte(to_level(images.at(index, c, y, x), lo, hi));

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::unique_ptr<std::FILE, FileCloser> f(std::fopen(tmp.c_str(), "wb"));
        if (!f) throw DataError("cannot write " + tmp.string());
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw DataError("libpng init failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw DataError("libpng write failed: " + path.string());
        }
        png_init_io(png, f.get());
        png_set_IHDR(png, info, png_uint_32(s.w), png_uint_32(s.h), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < s.h; ++y) png_write_row(png, rows.data() + std::size_t(y) * s.w * 3);
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    fs::rename(tmp, path);
}

TensorF read_png(const fs::path& path, float lo, float hi)
{
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) throw DataError("cannot read PNG " + path.string());
    img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw DataError("cannot decode PNG " + path.string());
    }
    const int h = int(img.height), w = int(img.width);
    TensorF t(Shape{1, 3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = from_level(buf[(std::size_t(y) * w + x) * 3 + c], lo, hi);
    return t;
}

TensorF tile_grid(const std::vector<TensorF>& images, int cols, float border)
{
    if (images.empty() || cols < 1) throw ShapeError("tile_grid: nothing to tile");
    const Shape s = images.front().shape();
    const int rows = (int(images.size()) + cols - 1) / cols;
    const int gh = rows * (s.h + 1) + 1, gw = cols * (s.w + 1) + 1;
    TensorF grid = TensorF::constant(Shape{1, 3, gh, gw}, border);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Shape si = images[i].shape();
        if (si.c != 3 || si.h != s.h || si.w != s.w) throw ShapeError("tile_grid: mismatched image " + si.str());
        const int oy = int(i) / cols * (s.h + 1) + 1, ox = int(i) % cols * (s.w + 1) + 1;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) grid.at(0, c, oy + y, ox + x) = images[i].at(0, c, y, x);
    }
    return grid;
}

void quantize_8bit(TensorF& images)
{
    for (Eigen::Index i = 0; i < images.size(); ++i) images[i] = from_level(to_level(images[i], -1.f, 1.f), -1.f, 1.f);
}

} // namespace reenact

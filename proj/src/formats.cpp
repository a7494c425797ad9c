#include "multidepth/formats.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "json.hpp"

namespace multidepth {

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_io("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_io("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail_io("write failed for " + path.string());
}

// ---- PNG ------------------------------------------------------------------

struct MemoryReader {
    const std::vector<std::uint8_t>* bytes;
    std::size_t pos;
};

void png_read_memory(png_structp png, png_bytep out, png_size_t n) {
    auto* r = static_cast<MemoryReader*>(png_get_io_ptr(png));
    if (r->pos + n > r->bytes->size()) png_error(png, "truncated PNG data");
    std::memcpy(out, r->bytes->data() + r->pos, n);
    r->pos += n;
}

void png_silent_warning(png_structp, png_const_charp) {}

struct DecodeHeader {
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int bit_depth = 0;
    int color_type = 0;
};

// libpng reports errors through longjmp; nothing with a destructor is
// created between setjmp and the end of this function.
bool decode_png(const std::vector<std::uint8_t>& bytes, DecodeHeader& header, std::vector<std::uint8_t>& raw,
                int& row_bytes, int& out_channels, std::string& error) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
    if (!png) {
        error = "png_create_read_struct failed";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        error = "png_create_info_struct failed";
        return false;
    }
    MemoryReader reader{&bytes, 0};
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        error = "corrupt or truncated PNG";
        return false;
    }
    png_set_read_fn(png, &reader, png_read_memory);
    png_read_info(png, info);
    png_get_IHDR(png, info, &header.width, &header.height, &header.bit_depth, &header.color_type, nullptr, nullptr,
                 nullptr);
    if (header.color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_packing(png);
    } else if (header.bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (header.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    row_bytes = static_cast<int>(png_get_rowbytes(png, info));
    out_channels = png_get_channels(png, info);
    raw.resize(static_cast<std::size_t>(row_bytes) * header.height);
    std::vector<png_bytep> rows(header.height);
    for (png_uint_32 y = 0; y < header.height; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

struct MemoryWriter {
    std::vector<std::uint8_t>* bytes;
};

void png_write_memory(png_structp png, png_bytep data, png_size_t n) {
    auto* w = static_cast<MemoryWriter*>(png_get_io_ptr(png));
    w->bytes->insert(w->bytes->end(), data, data + n);
}

void png_flush_noop(png_structp) {}

bool encode_png(const PngImage& img, const std::vector<std::uint8_t>& raw, std::vector<std::uint8_t>& out,
                std::string& error) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
    if (!png) {
        error = "png_create_write_struct failed";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        error = "png_create_info_struct failed";
        return false;
    }
    MemoryWriter writer{&out};
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    const std::size_t row_bytes = static_cast<std::size_t>(img.width) * img.channels * (img.bit_depth / 8);
    for (int y = 0; y < img.height; ++y) rows[y] = const_cast<png_bytep>(raw.data() + y * row_bytes);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        error = "PNG encoding failed";
        return false;
    }
    png_set_write_fn(png, &writer, png_write_memory, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

} // namespace

PngImage read_png(const fs::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) fail_input(path.string() + " is not a PNG file");
    DecodeHeader header;
    std::vector<std::uint8_t> raw;
    int row_bytes = 0;
    int channels = 0;
    std::string error;
    if (!decode_png(bytes, header, raw, row_bytes, channels, error)) fail_input(path.string() + ": " + error);

    PngImage img;
    img.width = static_cast<int>(header.width);
    img.height = static_cast<int>(header.height);
    img.indexed = header.color_type == PNG_COLOR_TYPE_PALETTE;
    img.bit_depth = header.bit_depth == 16 ? 16 : 8;
    if (channels != 1 && channels != 3) fail_input(path.string() + ": unsupported PNG color type");
    img.channels = channels;
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    img.samples.resize(n);
    for (int y = 0; y < img.height; ++y) {
        const std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * row_bytes;
        for (int i = 0; i < img.width * img.channels; ++i) {
            const std::size_t o = static_cast<std::size_t>(y) * img.width * img.channels + i;
            img.samples[o] = img.bit_depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
        }
    }
    return img;
}

void write_png(const fs::path& path, const PngImage& img) {
    if (img.channels != 1 && img.channels != 3) fail_input("PNG output must be gray or RGB");
    if (img.bit_depth != 8 && img.bit_depth != 16) fail_input("PNG output must be 8 or 16 bit");
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (img.samples.size() != n) fail_input("PNG sample count mismatch");
    std::vector<std::uint8_t> raw;
    raw.reserve(n * (img.bit_depth / 8));
    for (std::uint16_t v : img.samples) {
        if (img.bit_depth == 16) {
            raw.push_back(static_cast<std::uint8_t>(v >> 8));
            raw.push_back(static_cast<std::uint8_t>(v & 0xff));
        } else {
            raw.push_back(static_cast<std::uint8_t>(v));
        }
    }
    std::vector<std::uint8_t> out;
    std::string error;
    if (!encode_png(img, raw, out, error)) fail_io(path.string() + ": " + error);
    write_file(path, out);
}

ImageTensor load_image_png(const fs::path& path) {
    PngImage png = read_png(path);
    if (png.indexed) fail_input(path.string() + ": indexed PNGs are not supported as images");
    const float maxv = png.bit_depth == 16 ? 65535.0f : 255.0f;
    ImageTensor img(png.channels, png.height, png.width);
    for (int y = 0; y < png.height; ++y)
        for (int x = 0; x < png.width; ++x)
            for (int c = 0; c < png.channels; ++c)
                img.at(c, y, x) = png.samples[(static_cast<std::size_t>(y) * png.width + x) * png.channels + c] / maxv;
    return img;
}

void save_image_png(const fs::path& path, const ImageTensor& img, int bit_depth) {
    if (img.channels() != 1 && img.channels() != 3) fail_input("only gray or RGB images can be saved");
    PngImage png;
    png.width = img.width();
    png.height = img.height();
    png.channels = img.channels();
    png.bit_depth = bit_depth;
    const float maxv = bit_depth == 16 ? 65535.0f : 255.0f;
    png.samples.resize(static_cast<std::size_t>(png.width) * png.height * png.channels);
    for (int y = 0; y < png.height; ++y)
        for (int x = 0; x < png.width; ++x)
            for (int c = 0; c < png.channels; ++c)
                png.samples[(static_cast<std::size_t>(y) * png.width + x) * png.channels + c] =
                    static_cast<std::uint16_t>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * maxv));
    write_png(path, png);
}

// ---- depth ------------------------------------------------------------------

DepthUnit depth_unit_for(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".pfm" ? DepthUnit::PfmMeters : DepthUnit::MillimeterPng16;
}

namespace {

DepthMap load_png16_depth(const fs::path& path) {
    const PngImage png = read_png(path);
    if (png.channels != 1 || png.indexed) fail_input(path.string() + ": depth PNG must be single-channel gray");
    DepthMap d(png.height, png.width);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const std::uint16_t v = png.samples[i];
        if (v == 0) continue;
        d.depth[i] = static_cast<float>(v) / 1000.0f;
        d.valid[i] = 1;
    }
    return d;
}

// Reads one whitespace-delimited header token.
std::string pfm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
}

DepthMap load_pfm_depth(const fs::path& path, std::size_t* negative_count) {
    const auto bytes = read_file(path);
    std::size_t pos = 0;
    const std::string magic = pfm_token(bytes, pos);
    int channels = 0;
    if (magic == "Pf") channels = 1;
    else if (magic == "PF") channels = 3;
    else fail_input(path.string() + ": not a PFM file");
    int width = 0;
    int height = 0;
    double scale = 0.0;
    try {
        width = std::stoi(pfm_token(bytes, pos));
        height = std::stoi(pfm_token(bytes, pos));
        scale = std::stod(pfm_token(bytes, pos));
    } catch (const std::exception&) {
        fail_input(path.string() + ": malformed PFM header");
    }
    if (width <= 0 || height <= 0 || scale == 0.0) fail_input(path.string() + ": malformed PFM header");
    ++pos;  // single whitespace byte after the scale
    const bool little = scale < 0.0;
    const std::size_t count = static_cast<std::size_t>(width) * height * channels;
    if (bytes.size() < pos + count * 4) fail_input(path.string() + ": truncated PFM data");

    DepthMap d(height, width);
    std::size_t negatives = 0;
    for (int row = 0; row < height; ++row) {
        const int y = height - 1 - row;  // rows are stored bottom to top
        for (int x = 0; x < width; ++x) {
            const std::size_t o = pos + ((static_cast<std::size_t>(row) * width + x) * channels) * 4;
            std::uint32_t u = little ? (bytes[o] | (bytes[o + 1] << 8) | (bytes[o + 2] << 16) |
                                        (static_cast<std::uint32_t>(bytes[o + 3]) << 24))
                                     : ((static_cast<std::uint32_t>(bytes[o]) << 24) | (bytes[o + 1] << 16) |
                                        (bytes[o + 2] << 8) | bytes[o + 3]);
            const float v = std::bit_cast<float>(u);
            const std::size_t i = d.index(y, x);
            if (v < 0.0f) ++negatives;
            if (std::isfinite(v) && v > 0.0f) {
                d.depth[i] = v;
                d.valid[i] = 1;
            }
        }
    }
    if (negative_count) *negative_count = negatives;
    return d;
}

} // namespace

DepthMap load_depth(const fs::path& path, DepthUnit unit, std::size_t* negative_count) {
    if (negative_count) *negative_count = 0;
    return unit == DepthUnit::PfmMeters ? load_pfm_depth(path, negative_count) : load_png16_depth(path);
}

DepthMap load_depth(const fs::path& path) { return load_depth(path, depth_unit_for(path)); }

void save_depth(const fs::path& path, const DepthMap& depth, DepthUnit unit) {
    validate_depth(depth);
    if (unit == DepthUnit::MillimeterPng16) {
        PngImage png;
        png.width = depth.width;
        png.height = depth.height;
        png.channels = 1;
        png.bit_depth = 16;
        png.samples.assign(depth.size(), 0);
        for (std::size_t i = 0; i < depth.size(); ++i) {
            if (!depth.valid[i]) continue;
            const double mm = std::round(static_cast<double>(depth.depth[i]) * 1000.0);
            png.samples[i] = static_cast<std::uint16_t>(std::clamp(mm, 1.0, 65535.0));
        }
        write_png(path, png);
        return;
    }
    std::string header = "Pf\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) + "\n-1\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + depth.size() * 4);
    for (int row = 0; row < depth.height; ++row) {
        const int y = depth.height - 1 - row;
        for (int x = 0; x < depth.width; ++x) {
            const float v = depth.is_valid(y, x) ? depth.at(y, x) : 0.0f;
            const auto u = std::bit_cast<std::uint32_t>(v);
            for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
        }
    }
    write_file(path, bytes);
}

void save_depth(const fs::path& path, const DepthMap& depth) { save_depth(path, depth, depth_unit_for(path)); }

// ---- intrinsics -------------------------------------------------------------

CameraIntrinsics parse_intrinsics(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        fail_input(std::string("intrinsics JSON does not parse: ") + e.what());
    }
    if (!j.is_object()) fail_input("intrinsics JSON must be an object");
    CameraIntrinsics K;
    for (const char* key : {"fx", "fy", "cx", "cy"}) {
        if (!j.contains(key) || !j[key].is_number()) fail_input(std::string("intrinsics field '") + key + "' missing or not numeric");
    }
    K.fx = j["fx"].get<double>();
    K.fy = j["fy"].get<double>();
    K.cx = j["cx"].get<double>();
    K.cy = j["cy"].get<double>();
    K.validate();
    return K;
}

CameraIntrinsics load_intrinsics(const fs::path& path) {
    const auto bytes = read_file(path);
    return parse_intrinsics(std::string(bytes.begin(), bytes.end()));
}

void save_intrinsics(const fs::path& path, const CameraIntrinsics& K) {
    nlohmann::ordered_json j;
    j["fx"] = K.fx;
    j["fy"] = K.fy;
    j["cx"] = K.cx;
    j["cy"] = K.cy;
    const std::string s = j.dump(2) + "\n";
    write_file(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

// ---- PLY --------------------------------------------------------------------

namespace {

std::string format_float(float v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void save_ply(const PointCloud& pc, const fs::path& path, bool binary) {
    pc.validate();
    std::string header = "ply\nformat ";
    header += binary ? "binary_little_endian" : "ascii";
    header += " 1.0\nelement vertex " + std::to_string(pc.size()) +
              "\nproperty float x\nproperty float y\nproperty float z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const Point3& p = pc.points[i];
        const Color3 c = pc.colors.empty() ? Color3{255, 255, 255} : pc.colors[i];
        const float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
        if (binary) {
            for (float v : xyz) {
                const auto u = std::bit_cast<std::uint32_t>(v);
                for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
            }
            bytes.insert(bytes.end(), c.begin(), c.end());
        } else {
            const std::string line = format_float(xyz[0]) + " " + format_float(xyz[1]) + " " + format_float(xyz[2]) +
                                     " " + std::to_string(c[0]) + " " + std::to_string(c[1]) + " " +
                                     std::to_string(c[2]) + "\n";
            bytes.insert(bytes.end(), line.begin(), line.end());
        }
    }
    write_file(path, bytes);
}

PointCloud load_ply(const fs::path& path) {
    const auto bytes = read_file(path);
    const std::string marker = "end_header\n";
    const auto it = std::search(bytes.begin(), bytes.end(), marker.begin(), marker.end());
    if (it == bytes.end()) fail_input(path.string() + ": PLY header not terminated");
    const std::string header(bytes.begin(), it);
    std::size_t body = static_cast<std::size_t>(it - bytes.begin()) + marker.size();

    std::istringstream hs(header);
    std::string line;
    bool binary = false;
    std::size_t count = 0;
    std::vector<std::string> props;
    while (std::getline(hs, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "binary_little_endian") binary = true;
            else if (fmt != "ascii") fail_input(path.string() + ": unsupported PLY format " + fmt);
        } else if (word == "element") {
            std::string name;
            ls >> name >> count;
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            props.push_back(type + " " + name);
        }
    }
    const std::vector<std::string> expected{"float x", "float y", "float z", "uchar red", "uchar green", "uchar blue"};
    if (props != expected) fail_input(path.string() + ": unsupported PLY vertex layout");

    PointCloud pc;
    pc.points.reserve(count);
    pc.colors.reserve(count);
    if (binary) {
        if (bytes.size() < body + count * 15) fail_input(path.string() + ": truncated PLY body");
        for (std::size_t i = 0; i < count; ++i) {
            float xyz[3];
            for (float& v : xyz) {
                std::uint32_t u = 0;
                for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[body++]) << (8 * b);
                v = std::bit_cast<float>(u);
            }
            pc.points.push_back({xyz[0], xyz[1], xyz[2]});
            pc.colors.push_back({bytes[body], bytes[body + 1], bytes[body + 2]});
            body += 3;
        }
    } else {
        std::istringstream bs(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(body), bytes.end()));
        for (std::size_t i = 0; i < count; ++i) {
            float x, y, z;
            int r, g, b;
            if (!(bs >> x >> y >> z >> r >> g >> b)) fail_input(path.string() + ": truncated PLY body");
            pc.points.push_back({x, y, z});
            pc.colors.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
        }
    }
    return pc;
}

// ---- weights ----------------------------------------------------------------

const NamedTensor* WeightsFile::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) fail_input("weights file truncated");
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in[pos + b]) << (8 * b);
    pos += 4;
    return v;
}

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

} // namespace

std::vector<std::uint8_t> encode_weights(const WeightsFile& file) {
    std::vector<std::uint8_t> out{'M', 'D', 'P', 'T'};
    put_u32(out, WeightsFile::kVersion);
    put_u32(out, static_cast<std::uint32_t>(file.entries.size()));
    std::vector<std::string> seen;
    for (const auto& e : file.entries) {
        if (std::find(seen.begin(), seen.end(), e.name) != seen.end()) fail_input("duplicate tensor name " + e.name);
        seen.push_back(e.name);
        if (element_count(e.dims) != e.data.size()) fail_input("tensor " + e.name + " size does not match its dims");
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) put_u32(out, d);
        for (float v : e.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

WeightsFile decode_weights(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "MDPT", 4) != 0) fail_input("bad weights magic");
    std::size_t pos = 4;
    const std::uint32_t version = get_u32(bytes, pos);
    if (version != WeightsFile::kVersion) fail_input("unsupported weights version " + std::to_string(version));
    const std::uint32_t count = get_u32(bytes, pos);
    WeightsFile file;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint32_t len = get_u32(bytes, pos);
        if (pos + len > bytes.size()) fail_input("weights file truncated");
        t.name.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        const std::uint32_t rank = get_u32(bytes, pos);
        if (rank > 16) fail_input("tensor rank too large in weights file");
        for (std::uint32_t r = 0; r < rank; ++r) t.dims.push_back(get_u32(bytes, pos));
        const std::size_t n = element_count(t.dims);
        if (pos + n * 4 > bytes.size()) fail_input("tensor " + t.name + " payload shorter than its dims");
        t.data.resize(n);
        for (auto& v : t.data) v = std::bit_cast<float>(get_u32(bytes, pos));
        if (file.find(t.name)) fail_input("duplicate tensor name " + t.name);
        file.entries.push_back(std::move(t));
    }
    if (pos != bytes.size()) fail_input("trailing bytes after the last tensor");
    return file;
}

void save_weights(const WeightsFile& file, const fs::path& path) { write_file(path, encode_weights(file)); }

WeightsFile load_weights(const fs::path& path) { return decode_weights(read_file(path)); }

WeightsFile to_weights_file(const RNetWeights& weights) {
    WeightsFile f;
    const RNetConfig& c = weights.config;
    f.entries.push_back({"meta.rnet", {4},
                         {static_cast<float>(c.levels), static_cast<float>(c.base_channels),
                          static_cast<float>(c.depth_noise_sigma), static_cast<float>(c.residual_clamp)}});
    for (const auto& p : weights.params) {
        NamedTensor t{p.name, {}, p.value};
        for (int d : p.shape) t.dims.push_back(static_cast<std::uint32_t>(d));
        f.entries.push_back(std::move(t));
    }
    return f;
}

RNetWeights rnet_from_weights_file(const WeightsFile& file) {
    const NamedTensor* meta = file.find("meta.rnet");
    if (!meta || meta->data.size() != 4) fail_input("weights file lacks a meta.rnet entry");
    RNetConfig cfg;
    cfg.levels = static_cast<int>(meta->data[0]);
    cfg.base_channels = static_cast<int>(meta->data[1]);
    cfg.depth_noise_sigma = meta->data[2];
    cfg.residual_clamp = meta->data[3];
    RNetWeights w = zero_weights<float>(cfg);
    for (auto& p : w.params) {
        const NamedTensor* t = file.find(p.name);
        if (!t) fail_input("weights file lacks tensor " + p.name);
        std::vector<int> dims(t->dims.begin(), t->dims.end());
        if (dims != p.shape) fail_input("tensor " + p.name + " has the wrong shape");
        p.value = t->data;
    }
    if (!w.all_finite()) fail_numeric("weights file holds non-finite values");
    return w;
}

WeightsFile to_checkpoint(const RNetWeights& weights, const OptimState& state, std::uint64_t epoch) {
    if (state.step >= (1ULL << 24) || epoch >= (1ULL << 24)) fail_input("counter too large for a checkpoint");
    WeightsFile f = to_weights_file(weights);
    for (std::size_t i = 0; i < weights.params.size(); ++i) {
        NamedTensor m{"optim.m." + weights.params[i].name, {static_cast<std::uint32_t>(state.m[i].size())}, state.m[i]};
        NamedTensor v{"optim.v." + weights.params[i].name, {static_cast<std::uint32_t>(state.v[i].size())}, state.v[i]};
        f.entries.push_back(std::move(m));
        f.entries.push_back(std::move(v));
    }
    f.entries.push_back({"optim.step", {1}, {static_cast<float>(state.step)}});
    f.entries.push_back({"train.epoch", {1}, {static_cast<float>(epoch)}});
    return f;
}

void from_checkpoint(const WeightsFile& file, RNetWeights& weights, OptimState& state, std::uint64_t& epoch) {
    weights = rnet_from_weights_file(file);
    const AdamWConfig cfg = state.config;
    state = OptimState::for_weights(weights, cfg);
    for (std::size_t i = 0; i < weights.params.size(); ++i) {
        const NamedTensor* m = file.find("optim.m." + weights.params[i].name);
        const NamedTensor* v = file.find("optim.v." + weights.params[i].name);
        if (!m || !v || m->data.size() != state.m[i].size() || v->data.size() != state.v[i].size())
            fail_input("checkpoint lacks optimizer moments for " + weights.params[i].name);
        state.m[i] = m->data;
        state.v[i] = v->data;
    }
    const NamedTensor* step = file.find("optim.step");
    const NamedTensor* ep = file.find("train.epoch");
    if (!step || !ep || step->data.size() != 1 || ep->data.size() != 1) fail_input("checkpoint lacks counters");
    state.step = static_cast<std::uint64_t>(step->data[0]);
    epoch = static_cast<std::uint64_t>(ep->data[0]);
}

// ---- masks ------------------------------------------------------------------

MaskSet load_masks(const fs::path& path_or_dir) {
    MaskSet set;
    if (fs::is_directory(path_or_dir)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(path_or_dir)) {
            std::string ext = e.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const PngImage png = read_png(f);
            Mask m(png.height, png.width);
            for (int y = 0; y < png.height; ++y)
                for (int x = 0; x < png.width; ++x)
                    m.set(y, x, png.samples[(static_cast<std::size_t>(y) * png.width + x) * png.channels] != 0);
            if (!set.empty() && (m.height != set.height || m.width != set.width))
                fail_input("mask " + f.string() + " dimensions differ from the other masks");
            if (m.count() == 0) continue;
            set.add(f.stem().string(), std::move(m));
        }
        return set;
    }
    const PngImage png = read_png(path_or_dir);
    if (png.channels != 1 || png.bit_depth != 8) fail_input(path_or_dir.string() + ": label PNG must be 8-bit single channel");
    std::map<int, Mask> labels;
    for (int y = 0; y < png.height; ++y) {
        for (int x = 0; x < png.width; ++x) {
            const int label = png.samples[static_cast<std::size_t>(y) * png.width + x];
            if (label == 0) continue;
            auto [it, inserted] = labels.try_emplace(label, png.height, png.width);
            it->second.set(y, x, true);
        }
    }
    set.height = png.height;
    set.width = png.width;
    for (auto& [label, mask] : labels) set.add(std::to_string(label), std::move(mask));
    return set;
}

void save_masks(const MaskSet& masks, const fs::path& dir) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        PngImage png;
        png.width = masks.width;
        png.height = masks.height;
        png.channels = 1;
        png.bit_depth = 8;
        png.samples.resize(masks.masks[i].bits.size());
        for (std::size_t p = 0; p < png.samples.size(); ++p) png.samples[p] = masks.masks[i].bits[p] ? 255 : 0;
        write_png(dir / (masks.ids[i] + ".png"), png);
    }
}

// ---- resolution fitting -----------------------------------------------------

namespace {

Mask resize_mask_nearest(const Mask& m, int out_h, int out_w) {
    Mask out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / out_w));
            out.set(y, x, m(sy, sx));
        }
    }
    return out;
}

} // namespace

FittedInput fit_to_resolution(const ImageTensor& rgb, const DepthMap& depth, const MaskSet& masks,
                              const CameraIntrinsics& K, int out_h, int out_w, ResizePolicy policy) {
    if (rgb.height() != depth.height || rgb.width() != depth.width) fail_input("rgb and depth dimensions differ");
    if (out_h < 1 || out_w < 1) fail_input("target resolution must be positive");
    const int H = depth.height;
    const int W = depth.width;
    FittedInput f;

    if (policy == ResizePolicy::CenterCrop) {
        // Largest window with the target aspect ratio.
        int ch = H;
        int cw = static_cast<int>(std::lround(static_cast<double>(H) * out_w / out_h));
        if (cw > W) {
            cw = W;
            ch = static_cast<int>(std::lround(static_cast<double>(W) * out_h / out_w));
        }
        const int oy = (H - ch) / 2;
        const int ox = (W - cw) / 2;
        ImageTensor crop(rgb.channels(), ch, cw);
        DepthMap dcrop(ch, cw);
        for (int y = 0; y < ch; ++y) {
            for (int x = 0; x < cw; ++x) {
                for (int c = 0; c < rgb.channels(); ++c) crop.at(c, y, x) = rgb.at(c, oy + y, ox + x);
                dcrop.at(y, x) = depth.at(oy + y, ox + x);
                dcrop.valid[dcrop.index(y, x)] = depth.valid[depth.index(oy + y, ox + x)];
            }
        }
        f.rgb = resize_bilinear(crop, out_h, out_w);
        f.depth = resize_depth(dcrop, out_h, out_w);
        const double sx = static_cast<double>(out_w) / cw;
        const double sy = static_cast<double>(out_h) / ch;
        f.K = {K.fx * sx, K.fy * sy, (K.cx - ox + 0.5) * sx - 0.5, (K.cy - oy + 0.5) * sy - 0.5};
        for (std::size_t i = 0; i < masks.size(); ++i) {
            Mask m(ch, cw);
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x) m.set(y, x, masks.masks[i](oy + y, ox + x));
            Mask r = resize_mask_nearest(m, out_h, out_w);
            if (r.count() > 0) f.masks.add(masks.ids[i], std::move(r));
        }
        if (f.masks.empty()) {
            f.masks.height = out_h;
            f.masks.width = out_w;
        }
        return f;
    }

    const double scale = std::min(static_cast<double>(out_h) / H, static_cast<double>(out_w) / W);
    const int rh = std::max(1, static_cast<int>(std::lround(H * scale)));
    const int rw = std::max(1, static_cast<int>(std::lround(W * scale)));
    const int oy = (out_h - rh) / 2;
    const int ox = (out_w - rw) / 2;
    const ImageTensor small = resize_bilinear(rgb, rh, rw);
    const DepthMap dsmall = resize_depth(depth, rh, rw);
    f.rgb = ImageTensor(rgb.channels(), out_h, out_w);
    f.depth = DepthMap(out_h, out_w);
    for (int y = 0; y < rh; ++y) {
        for (int x = 0; x < rw; ++x) {
            for (int c = 0; c < rgb.channels(); ++c) f.rgb.at(c, oy + y, ox + x) = small.at(c, y, x);
            f.depth.at(oy + y, ox + x) = dsmall.at(y, x);
            f.depth.valid[f.depth.index(oy + y, ox + x)] = dsmall.valid[dsmall.index(y, x)];
        }
    }
    const double sx = static_cast<double>(rw) / W;
    const double sy = static_cast<double>(rh) / H;
    f.K = {K.fx * sx, K.fy * sy, (K.cx + 0.5) * sx - 0.5 + ox, (K.cy + 0.5) * sy - 0.5 + oy};
    f.masks.height = out_h;
    f.masks.width = out_w;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const Mask r = resize_mask_nearest(masks.masks[i], rh, rw);
        Mask m(out_h, out_w);
        for (int y = 0; y < rh; ++y)
            for (int x = 0; x < rw; ++x) m.set(oy + y, ox + x, r(y, x));
        if (m.count() > 0) f.masks.add(masks.ids[i], std::move(m));
    }
    return f;
}

} // namespace multidepth

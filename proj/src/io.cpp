// io.cpp - volume, mask and displacement-field files.

#include "smind/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <zlib.h>

#include "json.hpp"

namespace smind {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T> T byteswap_value(T v) {
    std::array<unsigned char, sizeof(T)> b{};
    std::memcpy(b.data(), &v, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

std::vector<char> read_bytes(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct RawHeader {
    Index3 dims{};
    Vec3 spacing{};
    int components = 1;
    fs::path payload;
};

RawHeader parse_header(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open header '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error &e) {
        throw FormatError("malformed header '" + path.string() + "' at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    RawHeader h;
    try {
        const auto dims = j.at("dims").get<std::vector<int64_t>>();
        const auto spacing = j.at("spacing").get<std::vector<double>>();
        if (dims.size() != 3 || spacing.size() != 3) throw FormatError("header '" + path.string() + "': dims and spacing need 3 entries");
        for (int a = 0; a < 3; ++a) {
            h.dims[a] = dims[static_cast<size_t>(a)];
            h.spacing[a] = spacing[static_cast<size_t>(a)];
            if (h.dims[a] <= 0 || !(h.spacing[a] > 0.0)) throw FormatError("header '" + path.string() + "': dims and spacing must be positive");
        }
        const auto dtype = j.value("dtype", std::string("f32"));
        if (dtype != "f32") throw FormatError("header '" + path.string() + "': unknown dtype '" + dtype + "'");
        const auto order = j.value("order", std::string("x-fastest"));
        if (order != "x-fastest") throw FormatError("header '" + path.string() + "': unsupported order '" + order + "'");
        h.components = j.value("components", 1);
        const auto payload = j.value("payload", path.stem().string() + ".raw");
        h.payload = path.parent_path() / payload;
    } catch (const json::exception &e) {
        throw FormatError("header '" + path.string() + "': " + e.what());
    }
    return h;
}

std::vector<double> read_payload(const RawHeader &h) {
    const size_t expected_values = static_cast<size_t>(h.dims[0] * h.dims[1] * h.dims[2]) * static_cast<size_t>(h.components);
    const std::vector<char> bytes = read_bytes(h.payload);
    const size_t expected = 4 * expected_values;
    if (bytes.size() != expected) {
        throw FormatError("payload '" + h.payload.string() + "' size mismatch: expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(bytes.size()));
    }
    std::vector<double> out(expected_values);
    for (size_t n = 0; n < expected_values; ++n) {
        float f;
        std::memcpy(&f, bytes.data() + 4 * n, 4);
        if constexpr (std::endian::native == std::endian::big) f = byteswap_value(f);
        out[n] = static_cast<double>(f);
    }
    return out;
}

void write_raw(const fs::path &header_path, const Index3 &dims, const Vec3 &spacing, int components,
               std::span<const double> values) {
    const fs::path payload = header_path.parent_path() / (header_path.stem().string() + ".raw");
    json j;
    j["dims"] = {dims[0], dims[1], dims[2]};
    j["spacing"] = {spacing[0], spacing[1], spacing[2]};
    j["dtype"] = "f32";
    j["order"] = "x-fastest";
    j["components"] = components;
    j["payload"] = payload.filename().string();
    {
        std::ofstream out(header_path);
        if (!out) throw FormatError("cannot write '" + header_path.string() + "'");
        out << j.dump(2) << '\n';
    }
    std::vector<char> bytes(4 * values.size());
    for (size_t n = 0; n < values.size(); ++n) {
        float f = static_cast<float>(values[n]);
        if constexpr (std::endian::native == std::endian::big) f = byteswap_value(f);
        std::memcpy(bytes.data() + 4 * n, &f, 4);
    }
    std::ofstream out(payload, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + payload.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool is_nifti(const fs::path &path) {
    const std::string name = path.filename().string();
    auto ends_with = [&](const std::string &s) {
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return ends_with(".nii") || ends_with(".nii.gz");
}

std::vector<unsigned char> read_maybe_gzipped(const fs::path &path) {
    gzFile gz = gzopen(path.string().c_str(), "rb");
    if (!gz) throw FormatError("cannot open '" + path.string() + "'");
    std::vector<unsigned char> out;
    std::array<unsigned char, 1 << 16> buf{};
    for (;;) {
        const int n = gzread(gz, buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) {
            int code = 0;
            const std::string msg = gzerror(gz, &code);
            gzclose(gz);
            throw FormatError("'" + path.string() + "': decompression failed after " + std::to_string(out.size()) +
                              " bytes: " + msg);
        }
        if (n == 0) break;
        out.insert(out.end(), buf.begin(), buf.begin() + n);
    }
    gzclose(gz);
    return out;
}

template <typename T> T load(const std::vector<unsigned char> &b, size_t offset, bool swap) {
    T v;
    std::memcpy(&v, b.data() + offset, sizeof(T));
    return swap ? byteswap_value(v) : v;
}

} // namespace

Volume read_volume(const fs::path &path) {
    if (is_nifti(path)) return read_nifti(path);
    const RawHeader h = parse_header(path);
    if (h.components != 1) {
        throw FormatError("header '" + path.string() + "': expected 1 component, found " + std::to_string(h.components));
    }
    return Volume(h.dims, h.spacing, read_payload(h));
}

void write_volume(const Volume &vol, const fs::path &path) {
    write_raw(path, vol.dims(), vol.spacing(), 1, vol.data());
}

DeformationField read_field(const fs::path &path) {
    const RawHeader h = parse_header(path);
    if (h.components != 3) {
        throw FormatError("field header '" + path.string() + "': expected 3 components, found " +
                          std::to_string(h.components));
    }
    return DeformationField(h.dims, h.spacing, read_payload(h));
}

void write_field(const DeformationField &field, const fs::path &path) {
    write_raw(path, field.dims(), field.spacing(), 3, field.data());
}

Volume read_nifti(const fs::path &path) {
    const std::vector<unsigned char> b = read_maybe_gzipped(path);
    if (b.size() < 348) {
        throw FormatError("'" + path.string() + "': NIfTI-1 header needs 348 bytes, file has " + std::to_string(b.size()));
    }
    const auto sizeof_hdr = load<int32_t>(b, 0, false);
    bool swap = false;
    if (sizeof_hdr != 348) {
        if (byteswap_value(sizeof_hdr) != 348) {
            throw FormatError("'" + path.string() + "': byte 0: sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");
        }
        swap = true;
    }
    if (!(b[344] == 'n' && (b[345] == '+' || b[345] == 'i') && b[346] == '1')) {
        throw FormatError("'" + path.string() + "': byte 344: missing NIfTI-1 magic");
    }

    std::array<int16_t, 8> dim{};
    for (size_t a = 0; a < 8; ++a) dim[a] = load<int16_t>(b, 40 + 2 * a, swap);
    std::array<float, 8> pixdim{};
    for (size_t a = 0; a < 8; ++a) pixdim[a] = load<float>(b, 76 + 4 * a, swap);
    const auto datatype = load<int16_t>(b, 70, swap);
    const auto vox_offset = load<float>(b, 108, swap);
    const auto slope = load<float>(b, 112, swap);
    const auto inter = load<float>(b, 116, swap);

    if (dim[0] < 1 || dim[0] > 7) {
        throw FormatError("'" + path.string() + "': byte 40: dim[0] = " + std::to_string(dim[0]) + " out of range");
    }
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    for (int a = 0; a < 3; ++a) {
        if (a < dim[0]) {
            if (dim[static_cast<size_t>(a + 1)] < 1) {
                throw FormatError("'" + path.string() + "': byte " + std::to_string(42 + 2 * a) + ": non-positive dim");
            }
            dims[a] = dim[static_cast<size_t>(a + 1)];
            const double p = std::abs(static_cast<double>(pixdim[static_cast<size_t>(a + 1)]));
            spacing[a] = p > 0.0 ? p : 1.0;
        }
    }
    for (int a = 3; a < dim[0]; ++a) {
        if (dim[static_cast<size_t>(a + 1)] > 1) {
            throw FormatError("'" + path.string() + "': only 3D volumes are supported (dim[" + std::to_string(a + 1) + "] = " +
                              std::to_string(dim[static_cast<size_t>(a + 1)]) + ")");
        }
    }

    size_t bytes_per = 0;
    switch (datatype) {
    case 2: case 256: bytes_per = 1; break;
    case 4: case 512: bytes_per = 2; break;
    case 8: case 16: case 768: bytes_per = 4; break;
    case 64: case 1024: case 1280: bytes_per = 8; break;
    default:
        throw FormatError("'" + path.string() + "': byte 70: unsupported datatype " + std::to_string(datatype));
    }
    const size_t count = static_cast<size_t>(dims[0] * dims[1] * dims[2]);
    const auto offset = static_cast<size_t>(std::max(352.0f, vox_offset));
    if (b.size() < offset + count * bytes_per) {
        throw FormatError("'" + path.string() + "': payload at byte " + std::to_string(offset) + " needs " +
                          std::to_string(count * bytes_per) + " bytes, file has " +
                          std::to_string(b.size() > offset ? b.size() - offset : 0));
    }
    std::vector<double> data(count);
    for (size_t n = 0; n < count; ++n) {
        const size_t o = offset + n * bytes_per;
        double v = 0.0;
        switch (datatype) {
        case 2: v = load<uint8_t>(b, o, false); break;
        case 256: v = load<int8_t>(b, o, false); break;
        case 4: v = load<int16_t>(b, o, swap); break;
        case 512: v = load<uint16_t>(b, o, swap); break;
        case 8: v = load<int32_t>(b, o, swap); break;
        case 768: v = load<uint32_t>(b, o, swap); break;
        case 16: v = load<float>(b, o, swap); break;
        case 64: v = load<double>(b, o, swap); break;
        case 1024: v = static_cast<double>(load<int64_t>(b, o, swap)); break;
        case 1280: v = static_cast<double>(load<uint64_t>(b, o, swap)); break;
        default: break;
        }
        data[n] = v;
    }
    if (slope != 0.0f && std::isfinite(slope)) {
        for (double &v : data) v = v * slope + inter;
    }
    // Stored as float32 in memory-equivalent precision.
    for (double &v : data) v = static_cast<double>(static_cast<float>(v));
    return Volume(dims, spacing, std::move(data));
}

} // namespace smind

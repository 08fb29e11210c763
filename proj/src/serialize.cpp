#include "sf3d/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include "json.hpp"

namespace sf3d {

namespace detail {

void write_le_floats(std::ostream& os, const float* data, size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
    } else {
        for (size_t i = 0; i < count; ++i) {
            auto bits = std::bit_cast<uint32_t>(data[i]);
            char bytes[4];
            for (int b = 0; b < 4; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
            os.write(bytes, 4);
        }
    }
}

void read_le_floats(std::istream& is, float* data, size_t count) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
    if constexpr (std::endian::native != std::endian::little) {
        for (size_t i = 0; i < count; ++i) {
            uint32_t raw;
            std::memcpy(&raw, data + i, 4);
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= ((raw >> (8 * (3 - b))) & 0xff) << (8 * b);
            data[i] = std::bit_cast<float>(bits);
        }
    }
}

}  // namespace detail

void save_tensor(const Tensor& tensor, const std::filesystem::path& dir, const std::string& name) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    check(!ec, ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

    std::ofstream blob(dir / (name + ".bin"), std::ios::binary);
    check(blob.good(), ErrorCode::IoError, "cannot open " + (dir / (name + ".bin")).string());
    detail::write_le_floats(blob, tensor.ptr(), static_cast<size_t>(tensor.numel()));
    check(blob.good(), ErrorCode::IoError, "write failed for " + name);

    nlohmann::json desc{{"shape", tensor.shape()}, {"dtype", "float32"}, {"name", name}};
    std::ofstream meta(dir / (name + ".json"));
    check(meta.good(), ErrorCode::IoError, "cannot open descriptor for " + name);
    meta << desc.dump(2) << '\n';
}

Tensor load_tensor(const std::filesystem::path& dir, const std::string& name) {
    const auto meta_path = dir / (name + ".json");
    const auto blob_path = dir / (name + ".bin");
    std::ifstream meta(meta_path);
    check(meta.good(), ErrorCode::IoError, "cannot open " + meta_path.string());

    nlohmann::json desc;
    Shape shape;
    try {
        meta >> desc;
        check(desc.at("dtype").get<std::string>() == "float32", ErrorCode::FormatError,
              "unsupported dtype in " + meta_path.string());
        shape = desc.at("shape").get<Shape>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, meta_path.string() + ": " + e.what());
    }
    check(!shape.empty(), ErrorCode::FormatError, "empty shape in " + meta_path.string());
    for (int64_t d : shape) check(d > 0, ErrorCode::FormatError, "non-positive extent in " + meta_path.string());

    std::ifstream blob(blob_path, std::ios::binary | std::ios::ate);
    check(blob.good(), ErrorCode::IoError, "cannot open " + blob_path.string());
    const auto bytes = static_cast<int64_t>(blob.tellg());
    const int64_t expected = shape_numel(shape) * static_cast<int64_t>(sizeof(float));
    check(bytes == expected, ErrorCode::FormatError,
          blob_path.string() + " holds " + std::to_string(bytes) + " bytes, descriptor implies " + std::to_string(expected));
    blob.seekg(0);
    Tensor t(shape);
    detail::read_le_floats(blob, t.ptr(), static_cast<size_t>(t.numel()));
    check(blob.good(), ErrorCode::IoError, "read failed for " + blob_path.string());
    return t;
}

}  // namespace sf3d

#include "sf3d/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sf3d/serialize.hpp"

namespace sf3d {

void SynthConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) { check(ok, ErrorCode::InvalidConfig, "synth config: " + msg); };
    require(extent > 0 && extent % 32 == 0, "extent must be a positive multiple of 32");
    require(num_classes >= 2, "num_classes must be >= 2");
    require(modalities >= 1, "modalities must be >= 1");
    require(min_shapes_per_class >= 0 && max_shapes_per_class >= min_shapes_per_class, "bad shapes-per-class range");
    require(outer_axis_min > 0 && outer_axis_max >= outer_axis_min, "bad outer axis range");
    require(outer_axis_max < extent / 2.0 - 1.0, "outer axes must leave background around the shape");
    require(inner_ratio_min > 0 && inner_ratio_max >= inner_ratio_min && inner_ratio_max <= 1.0, "bad inner ratio range");
    require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
}

nlohmann::json to_json(const SynthConfig& cfg) {
    return {{"extent", cfg.extent},
            {"num_classes", cfg.num_classes},
            {"modalities", cfg.modalities},
            {"min_shapes_per_class", cfg.min_shapes_per_class},
            {"max_shapes_per_class", cfg.max_shapes_per_class},
            {"outer_axis_min", cfg.outer_axis_min},
            {"outer_axis_max", cfg.outer_axis_max},
            {"inner_ratio_min", cfg.inner_ratio_min},
            {"inner_ratio_max", cfg.inner_ratio_max},
            {"noise_sigma", cfg.noise_sigma},
            {"seed", cfg.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, bool validate) {
    SynthConfig cfg;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "extent") cfg.extent = value.get<int>();
            else if (key == "num_classes") cfg.num_classes = value.get<int>();
            else if (key == "modalities") cfg.modalities = value.get<int>();
            else if (key == "min_shapes_per_class") cfg.min_shapes_per_class = value.get<int>();
            else if (key == "max_shapes_per_class") cfg.max_shapes_per_class = value.get<int>();
            else if (key == "outer_axis_min") cfg.outer_axis_min = value.get<double>();
            else if (key == "outer_axis_max") cfg.outer_axis_max = value.get<double>();
            else if (key == "inner_ratio_min") cfg.inner_ratio_min = value.get<double>();
            else if (key == "inner_ratio_max") cfg.inner_ratio_max = value.get<double>();
            else if (key == "noise_sigma") cfg.noise_sigma = value.get<double>();
            else if (key == "seed") cfg.seed = value.get<uint64_t>();
            else fail(ErrorCode::InvalidConfig, "unknown data key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("data config: ") + e.what());
    }
    if (validate) cfg.validate();
    return cfg;
}

bool Ellipsoid::contains(double z, double y, double x) const {
    const double dz = (z - center[0]) / axes[0], dy = (y - center[1]) / axes[1], dx = (x - center[2]) / axes[2];
    return dz * dz + dy * dy + dx * dx <= 1.0;
}

namespace {

std::vector<Ellipsoid> place_shapes(const SynthConfig& cfg, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> count(cfg.min_shapes_per_class, cfg.max_shapes_per_class);
    std::uniform_real_distribution<double> outer(cfg.outer_axis_min, cfg.outer_axis_max);
    std::uniform_real_distribution<double> ratio(cfg.inner_ratio_min, cfg.inner_ratio_max);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double n = cfg.extent;

    std::vector<Ellipsoid> shapes;
    std::vector<size_t> parents;
    for (int label = 1; label < cfg.num_classes; ++label) {
        const int k = count(rng);
        std::vector<size_t> placed;
        for (int s = 0; s < k; ++s) {
            Ellipsoid e;
            e.label = label;
            if (label == 1) {
                for (int a = 0; a < 3; ++a) {
                    e.axes[a] = outer(rng);
                    // Keeps at least one voxel of background on each side.
                    const double lo = e.axes[a] + 1.0, hi = n - 2.0 - e.axes[a];
                    e.center[a] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * unit(rng);
                }
            } else {
                if (parents.empty()) break;
                std::uniform_int_distribution<size_t> pick(0, parents.size() - 1);
                const Ellipsoid& p = shapes[parents[pick(rng)]];
                for (int a = 0; a < 3; ++a) {
                    e.axes[a] = p.axes[a] * ratio(rng);
                    e.center[a] = p.center[a] + 0.5 * (p.axes[a] - e.axes[a]) * unit(rng);
                }
            }
            placed.push_back(shapes.size());
            shapes.push_back(e);
        }
        parents = std::move(placed);
    }
    return shapes;
}

}  // namespace

VolumeSample generate(const SynthConfig& cfg, int64_t index) {
    cfg.validate();
    std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(cfg.seed >> 32),
                      static_cast<uint32_t>(index), static_cast<uint32_t>(static_cast<uint64_t>(index) >> 32)};
    std::mt19937_64 rng(seq);

    VolumeSample s;
    s.num_classes = cfg.num_classes;
    s.meta.seed = cfg.seed;
    s.meta.index = index;
    s.meta.shapes = place_shapes(cfg, rng);

    const int64_t n = cfg.extent, voxels = n * n * n;
    s.mask = IntTensor({n, n, n});
    for (int64_t z = 0; z < n; ++z)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                int32_t label = 0;
                for (const Ellipsoid& e : s.meta.shapes)
                    if (e.label > label && e.contains(double(z), double(y), double(x))) label = e.label;
                s.mask.data[static_cast<size_t>((z * n + y) * n + x)] = label;
            }

    s.image = Tensor({cfg.modalities, n, n, n});
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int m = 0; m < cfg.modalities; ++m) {
        // Each modality sees the label field through its own contrast.
        const double gain = (m % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.25 * m), offset = 0.5 * m;
        float* img = s.image.ptr() + m * voxels;
        double mean = 0.0;
        for (int64_t v = 0; v < voxels; ++v) {
            const double value = gain * s.mask.data[static_cast<size_t>(v)] + offset + cfg.noise_sigma * noise(rng);
            img[v] = static_cast<float>(value);
            mean += value;
        }
        mean /= static_cast<double>(voxels);
        double var = 0.0;
        for (int64_t v = 0; v < voxels; ++v) var += (img[v] - mean) * (img[v] - mean);
        const double sd = std::sqrt(var / static_cast<double>(voxels));
        const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
        for (int64_t v = 0; v < voxels; ++v) img[v] = static_cast<float>((img[v] - mean) * inv);
    }
    return s;
}

VolumeSample flip(const VolumeSample& s, const std::array<bool, 3>& axes) {
    const Shape& ms = s.mask.shape;
    const int64_t d = ms[0], h = ms[1], w = ms[2], voxels = d * h * w;
    const int64_t channels = s.image.dim(0);
    VolumeSample out = s;
    out.image = s.image.detach();
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int64_t sz = axes[0] ? d - 1 - z : z, sy = axes[1] ? h - 1 - y : y, sx = axes[2] ? w - 1 - x : x;
                const int64_t dst = (z * h + y) * w + x, src = (sz * h + sy) * w + sx;
                out.mask.data[static_cast<size_t>(dst)] = s.mask.data[static_cast<size_t>(src)];
                for (int64_t c = 0; c < channels; ++c) out.image.ptr()[c * voxels + dst] = s.image.ptr()[c * voxels + src];
            }
    return out;
}

VolumeSample augment(const VolumeSample& s, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(0.5);
    std::array<bool, 3> axes{};
    for (bool& a : axes) a = coin(rng);
    VolumeSample out = flip(s, axes);
    std::uniform_real_distribution<float> jitter(0.9f, 1.1f);
    const int64_t channels = out.image.dim(0), voxels = out.image.numel() / channels;
    for (int64_t c = 0; c < channels; ++c) {
        const float f = jitter(rng);
        float* img = out.image.ptr() + c * voxels;
        for (int64_t v = 0; v < voxels; ++v) img[v] *= f;
    }
    return out;
}

std::pair<Tensor, IntTensor> make_batch(const std::vector<VolumeSample>& samples) {
    check(!samples.empty(), ErrorCode::InvalidArgument, "empty batch");
    const Shape& img = samples.front().image.shape();
    const Shape& msk = samples.front().mask.shape;
    const auto b = static_cast<int64_t>(samples.size());
    Shape image_shape{b};
    image_shape.insert(image_shape.end(), img.begin(), img.end());
    Shape mask_shape{b};
    mask_shape.insert(mask_shape.end(), msk.begin(), msk.end());
    Tensor image(image_shape);
    IntTensor mask(mask_shape);
    const int64_t per_image = shape_numel(img), per_mask = shape_numel(msk);
    for (int64_t i = 0; i < b; ++i) {
        const VolumeSample& s = samples[static_cast<size_t>(i)];
        check(s.image.shape() == img && s.mask.shape == msk, ErrorCode::ShapeMismatch, "batch samples differ in shape");
        std::copy(s.image.data().begin(), s.image.data().end(), image.ptr() + i * per_image);
        std::copy(s.mask.data.begin(), s.mask.data.end(), mask.data.begin() + i * per_mask);
    }
    return {image, mask};
}

namespace {

constexpr char kMagic[5] = {'V', 'S', 'E', 'G', '1'};
constexpr uint32_t kMaxHeader = 1u << 20;

void write_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

uint32_t read_u32(const char* b) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

nlohmann::json meta_to_json(const SampleMeta& m) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const Ellipsoid& e : m.shapes) shapes.push_back({{"label", e.label}, {"center", e.center}, {"axes", e.axes}});
    return {{"seed", m.seed}, {"index", m.index}, {"spacing", m.spacing}, {"shapes", shapes}};
}

SampleMeta meta_from_json(const nlohmann::json& j) {
    SampleMeta m;
    m.seed = j.at("seed").get<uint64_t>();
    m.index = j.at("index").get<int64_t>();
    m.spacing = j.at("spacing").get<std::array<double, 3>>();
    for (const auto& e : j.at("shapes"))
        m.shapes.push_back({e.at("label").get<int>(), e.at("center").get<std::array<double, 3>>(),
                            e.at("axes").get<std::array<double, 3>>()});
    return m;
}

}  // namespace

void save_volume(const VolumeSample& s, const std::filesystem::path& path) {
    check(s.image.rank() == 4 && s.mask.shape.size() == 3, ErrorCode::ShapeMismatch, "sample must be [C,D,H,W] + [D,H,W]");
    const nlohmann::json header{{"shape", s.image.shape()},
                                {"dtype", "float32"},
                                {"mask_dtype", "int32"},
                                {"channels", s.image.dim(0)},
                                {"classes", s.num_classes},
                                {"meta", meta_to_json(s.meta)}};
    const std::string text = header.dump();
    std::ofstream os(path, std::ios::binary);
    check(os.good(), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    write_u32(os, static_cast<uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::write_le_floats(os, s.image.ptr(), static_cast<size_t>(s.image.numel()));
    for (int32_t v : s.mask.data) write_u32(os, std::bit_cast<uint32_t>(v));
    check(os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

VolumeSample load_volume(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), ErrorCode::IoError, "cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::string where = path.string() + ": ";
    check(bytes.size() >= sizeof kMagic + 4 && std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0, ErrorCode::FormatError,
          where + "missing VSEG1 magic");
    const uint32_t header_len = read_u32(bytes.data() + sizeof kMagic);
    const size_t payload_at = sizeof kMagic + 4 + header_len;
    check(header_len <= kMaxHeader && payload_at <= bytes.size(), ErrorCode::FormatError, where + "truncated header");

    VolumeSample s;
    Shape shape;
    try {
        const auto header = nlohmann::json::parse(bytes.begin() + sizeof kMagic + 4, bytes.begin() + static_cast<long>(payload_at));
        check(header.at("dtype") == "float32" && header.at("mask_dtype") == "int32", ErrorCode::FormatError,
              where + "unsupported dtype");
        shape = header.at("shape").get<Shape>();
        s.num_classes = header.at("classes").get<int>();
        check(header.at("channels").get<int64_t>() == (shape.empty() ? -1 : shape[0]), ErrorCode::FormatError,
              where + "channel count disagrees with shape");
        s.meta = meta_from_json(header.at("meta"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, where + "bad header: " + e.what());
    }
    check(shape.size() == 4 && std::all_of(shape.begin(), shape.end(), [](int64_t d) { return d > 0 && d <= (1 << 16); }),
          ErrorCode::FormatError, where + "bad shape " + shape_to_string(shape));
    check(s.num_classes >= 2, ErrorCode::FormatError, where + "bad class count");

    const int64_t image_n = shape_numel(shape), mask_n = image_n / shape[0];
    const size_t expected = payload_at + static_cast<size_t>(image_n + mask_n) * 4;
    check(bytes.size() == expected, ErrorCode::FormatError,
          where + "payload is " + std::to_string(bytes.size() - payload_at) + " bytes, header implies " +
              std::to_string(expected - payload_at));

    s.image = Tensor(shape);
    std::string image_bytes(bytes.begin() + static_cast<long>(payload_at),
                            bytes.begin() + static_cast<long>(payload_at + static_cast<size_t>(image_n) * 4));
    std::istringstream image_stream(image_bytes);
    detail::read_le_floats(image_stream, s.image.ptr(), static_cast<size_t>(image_n));
    s.mask = IntTensor({shape[1], shape[2], shape[3]});
    const char* mask_at = bytes.data() + payload_at + static_cast<size_t>(image_n) * 4;
    for (int64_t i = 0; i < mask_n; ++i) {
        const auto v = std::bit_cast<int32_t>(read_u32(mask_at + 4 * i));
        check(v >= 0 && v < s.num_classes, ErrorCode::FormatError, where + "mask label out of range");
        s.mask.data[static_cast<size_t>(i)] = v;
    }
    return s;
}

void write_dataset(const SynthConfig& cfg, int64_t first_index, int64_t count, const std::filesystem::path& dir) {
    cfg.validate();
    check(count >= 1 && first_index >= 0, ErrorCode::InvalidArgument, "dataset needs a positive count");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    check(!ec, ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json files = nlohmann::json::array();
    for (int64_t i = first_index; i < first_index + count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%06lld.vseg", static_cast<long long>(i));
        save_volume(generate(cfg, i), dir / name);
        files.push_back(name);
    }
    std::ofstream os(dir / "index.json");
    check(os.good(), ErrorCode::IoError, "cannot write " + (dir / "index.json").string());
    os << nlohmann::json{{"format", "VSEG1"}, {"config", to_json(cfg)}, {"first_index", first_index}, {"files", files}}.dump(2)
       << '\n';
}

std::vector<VolumeSample> load_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "index.json");
    check(is.good(), ErrorCode::IoError, "cannot open " + (dir / "index.json").string());
    std::vector<std::string> files;
    try {
        files = nlohmann::json::parse(is).at("files").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, (dir / "index.json").string() + ": " + e.what());
    }
    check(!files.empty(), ErrorCode::FormatError, "dataset index lists no files");
    std::vector<VolumeSample> out;
    for (const std::string& f : files) out.push_back(load_volume(dir / f));
    return out;
}

}  // namespace sf3d

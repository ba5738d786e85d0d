#include "sftnet/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace sft {

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
    if (count < 1) throw ParameterError("synth spec: count must be >= 1");
    if (h < 8 || w < 8) throw ParameterError("synth spec: image extents too small");
    if (area_min < 1 || area_max < area_min || area_max > h * w / 4)
        throw ParameterError("synth spec: impossible mass area range [" + std::to_string(area_min) +
                             ", " + std::to_string(area_max) + "] for " + std::to_string(h) + "x" +
                             std::to_string(w));
    if (blobs_min < 1 || blobs_max < blobs_min) throw ParameterError("synth spec: bad blob range");
    if (distractors_min < 0 || distractors_max < distractors_min)
        throw ParameterError("synth spec: bad distractor range");
    if (noise_amplitude < 0.0 || noise_amplitude > 1.0)
        throw ParameterError("synth spec: noise amplitude must be in [0,1]");
    if (smooth_radius < 0) throw ParameterError("synth spec: smoothing radius must be >= 0");
}

namespace {

// Exact-area elliptical blob: rank all pixels of the bounding box by
// normalized elliptical distance and keep the `area` closest, ties broken by
// raster order. The pixel count is exact by construction.
std::vector<int64_t> ellipse_pixels(int64_t h, int64_t w, double cy, double cx, double a, double b,
                                    double theta, int64_t area) {
    const double ct = std::cos(theta), st = std::sin(theta);
    const int64_t r = int64_t(std::ceil(std::max(a, b))) + 1;
    const int64_t y0 = std::max<int64_t>(0, int64_t(cy) - r), y1 = std::min(h - 1, int64_t(cy) + r);
    const int64_t x0 = std::max<int64_t>(0, int64_t(cx) - r), x1 = std::min(w - 1, int64_t(cx) + r);
    std::vector<std::pair<double, int64_t>> ranked;
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
            const double dy = double(y) - cy, dx = double(x) - cx;
            const double u = (dx * ct + dy * st) / a;
            const double v = (-dx * st + dy * ct) / b;
            ranked.push_back({u * u + v * v, y * w + x});
        }
    if (int64_t(ranked.size()) < area) return {};
    std::sort(ranked.begin(), ranked.end());
    std::vector<int64_t> out;
    out.reserve(size_t(area));
    for (int64_t i = 0; i < area; ++i) out.push_back(ranked[size_t(i)].second);
    return out;
}

void box_blur_inplace(std::vector<float>& img, int64_t h, int64_t w, int64_t radius) {
    if (radius < 1) return;
    std::vector<float> tmp(img.size());
    const float norm = 1.0f / float(2 * radius + 1);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int64_t k = -radius; k <= radius; ++k)
                acc += img[size_t(y * w + std::clamp<int64_t>(x + k, 0, w - 1))];
            tmp[size_t(y * w + x)] = acc * norm;
        }
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int64_t k = -radius; k <= radius; ++k)
                acc += tmp[size_t(std::clamp<int64_t>(y + k, 0, h - 1) * w + x)];
            img[size_t(y * w + x)] = acc * norm;
        }
}

}  // namespace

std::vector<SegmentationSample> generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    std::vector<SegmentationSample> samples;
    samples.reserve(size_t(spec.count));
    const int64_t H = spec.h, W = spec.w;
    for (int64_t i = 0; i < spec.count; ++i) {
        Prng rng(derive_seed(spec.seed, uint64_t(i)));
        std::vector<float> mask(size_t(H * W), 0.0f);
        std::vector<float> fg(size_t(H * W), 0.0f);

        const int64_t blobs = rng.uniform_int(spec.blobs_min, spec.blobs_max);
        for (int64_t bi = 0; bi < blobs; ++bi) {
            const int64_t area = rng.uniform_int(spec.area_min, spec.area_max);
            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                const double aspect = rng.uniform(0.6, 1.8);
                const double theta = rng.uniform(0.0, M_PI);
                const double a = std::sqrt(double(area) * aspect / M_PI);
                const double b = std::sqrt(double(area) / (aspect * M_PI));
                const double margin = std::max(a, b) + 2.0;
                if (2.0 * margin >= double(std::min(H, W))) continue;
                const double cy = rng.uniform(margin, double(H) - margin);
                const double cx = rng.uniform(margin, double(W) - margin);
                auto px = ellipse_pixels(H, W, cy, cx, a, b, theta, area);
                if (int64_t(px.size()) != area) continue;
                bool overlap = false;
                for (int64_t p : px)
                    if (mask[size_t(p)] != 0.0f) overlap = true;
                if (overlap) continue;
                const float intensity = float(rng.uniform(0.75, 0.95));
                for (int64_t p : px) {
                    mask[size_t(p)] = 1.0f;
                    fg[size_t(p)] = intensity;
                }
                placed = true;
            }
            if (!placed)
                throw ParameterError("generate_synthetic: could not place a mass of area " +
                                     std::to_string(area) + " without overlap");
        }

        // Distractors: thin bright streaks that never touch mass pixels, so
        // brightness alone cannot separate the classes.
        const int64_t nd = rng.uniform_int(spec.distractors_min, spec.distractors_max);
        for (int64_t di = 0; di < nd; ++di) {
            double y = rng.uniform(2.0, double(H) - 2.0);
            double x = rng.uniform(2.0, double(W) - 2.0);
            double dir = rng.uniform(0.0, 2.0 * M_PI);
            const int64_t steps = rng.uniform_int(std::max<int64_t>(4, H / 6), std::max<int64_t>(6, H / 3));
            const float intensity = float(rng.uniform(0.45, 0.6));
            for (int64_t s = 0; s < steps; ++s) {
                const int64_t yi = int64_t(std::llround(y)), xi = int64_t(std::llround(x));
                if (yi < 0 || yi >= H || xi < 0 || xi >= W) break;
                const size_t p = size_t(yi * W + xi);
                if (mask[p] == 0.0f) fg[p] = std::max(fg[p], intensity);
                dir += rng.uniform(-0.3, 0.3);
                y += std::sin(dir);
                x += std::cos(dir);
            }
        }

        std::vector<float> img(size_t(H * W), 0.0f);
        if (spec.noise_amplitude > 0.0) {
            for (auto& v : img) v = float(rng.uniform(0.0, spec.noise_amplitude));
            box_blur_inplace(img, H, W, spec.smooth_radius);
        }
        int64_t area_px = 0;
        for (size_t p = 0; p < img.size(); ++p) {
            img[p] = std::clamp(img[p] + fg[p], 0.0f, 1.0f);
            area_px += mask[p] != 0.0f ? 1 : 0;
        }

        char name[32];
        std::snprintf(name, sizeof(name), "s%05lld", static_cast<long long>(i));
        samples.push_back({name, Tensor<float>::from_data({H, W, 1}, std::move(img)),
                           Tensor<float>::from_data({H, W, 1}, std::move(mask)), area_px});
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Resize
// ---------------------------------------------------------------------------

Tensor<float> resize(const Tensor<float>& img, int64_t out_h, int64_t out_w, ResizeMode mode) {
    if (img.rank() != 3) throw DimensionError("resize expects (H,W,C), got " + shape_str(img.shape()));
    if (out_h < 1 || out_w < 1) throw ParameterError("resize target extents must be positive");
    const int64_t H = img.shape()[0], W = img.shape()[1], C = img.shape()[2];
    const double sy = double(H) / double(out_h), sx = double(W) / double(out_w);
    std::vector<float> out(size_t(out_h * out_w * C));
    const auto& v = img.values();
    for (int64_t y = 0; y < out_h; ++y)
        for (int64_t x = 0; x < out_w; ++x) {
            if (mode == ResizeMode::Nearest) {
                const int64_t iy = std::clamp<int64_t>(int64_t((double(y) + 0.5) * sy), 0, H - 1);
                const int64_t ix = std::clamp<int64_t>(int64_t((double(x) + 0.5) * sx), 0, W - 1);
                for (int64_t c = 0; c < C; ++c)
                    out[size_t((y * out_w + x) * C + c)] = v[size_t((iy * W + ix) * C + c)];
            } else {
                const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(H - 1));
                const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(W - 1));
                const int64_t y0 = int64_t(fy), x0 = int64_t(fx);
                const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                const double wy = fy - double(y0), wx = fx - double(x0);
                for (int64_t c = 0; c < C; ++c) {
                    const double v00 = v[size_t((y0 * W + x0) * C + c)];
                    const double v01 = v[size_t((y0 * W + x1) * C + c)];
                    const double v10 = v[size_t((y1 * W + x0) * C + c)];
                    const double v11 = v[size_t((y1 * W + x1) * C + c)];
                    out[size_t((y * out_w + x) * C + c)] =
                        float((1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
                }
            }
        }
    return Tensor<float>::from_data({out_h, out_w, C}, std::move(out));
}

// ---------------------------------------------------------------------------
// CLAHE
// ---------------------------------------------------------------------------

namespace {
inline int bin_of(float v) { return std::min(255, int(double(v) * 256.0)); }

inline int64_t mirror_index(int64_t i, int64_t n) {
    if (n == 1) return 0;
    if (i < n) return i;
    const int64_t m = 2 * n - 2 - i;
    return std::clamp<int64_t>(m, 0, n - 1);
}
}  // namespace

Tensor<float> clahe(const Tensor<float>& img, int64_t tiles, double clip_limit) {
    if (clip_limit <= 0.0) throw ParameterError("clahe clip limit must be positive");
    if (tiles < 1) throw ParameterError("clahe tile count must be >= 1");
    if (img.rank() != 3 || img.shape()[2] != 1)
        throw DimensionError("clahe expects (H,W,1), got " + shape_str(img.shape()));
    const int64_t H = img.shape()[0], W = img.shape()[1];

    // Reflect-pad to a multiple of the tile grid.
    const int64_t Hp = (H + tiles - 1) / tiles * tiles;
    const int64_t Wp = (W + tiles - 1) / tiles * tiles;
    std::vector<float> padded(size_t(Hp * Wp));
    const auto& v = img.values();
    for (int64_t y = 0; y < Hp; ++y)
        for (int64_t x = 0; x < Wp; ++x)
            padded[size_t(y * Wp + x)] = v[size_t(mirror_index(y, H) * W + mirror_index(x, W))];

    const int64_t th = Hp / tiles, tw = Wp / tiles;
    const double tile_px = double(th * tw);
    const double limit = clip_limit * tile_px / 256.0;

    // Per-tile clipped-equalization LUTs. A raw histogram concentrated in a
    // single bin maps through unchanged.
    std::vector<std::array<double, 256>> lut(size_t(tiles * tiles));
    std::vector<uint8_t> passthrough(size_t(tiles * tiles), 0);
    for (int64_t ty = 0; ty < tiles; ++ty)
        for (int64_t tx = 0; tx < tiles; ++tx) {
            std::array<double, 256> hist{};
            for (int64_t y = ty * th; y < (ty + 1) * th; ++y)
                for (int64_t x = tx * tw; x < (tx + 1) * tw; ++x)
                    hist[size_t(bin_of(padded[size_t(y * Wp + x)]))] += 1.0;
            int nonzero = 0;
            for (double hcount : hist) nonzero += hcount > 0.0 ? 1 : 0;
            auto& m = lut[size_t(ty * tiles + tx)];
            if (nonzero <= 1) {
                passthrough[size_t(ty * tiles + tx)] = 1;
                continue;
            }
            double excess = 0.0;
            for (auto& hcount : hist)
                if (hcount > limit) {
                    excess += hcount - limit;
                    hcount = limit;
                }
            const double share = excess / 256.0;
            double cdf = 0.0;
            for (int b = 0; b < 256; ++b) {
                const double clipped = hist[size_t(b)] + share;
                if (clipped > limit + share + 1e-9)
                    throw InternalError("clahe: clipped histogram bin exceeds its bound");
                cdf += clipped;
                m[size_t(b)] = cdf / tile_px;
            }
        }

    // Bilinear blending between the four surrounding tile mappings.
    std::vector<float> out(size_t(H * W));
    auto apply = [&](int64_t t, float value) {
        return passthrough[size_t(t)] ? double(value) : lut[size_t(t)][size_t(bin_of(value))];
    };
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const float value = padded[size_t(y * Wp + x)];
            const double fy = (double(y) + 0.5) / double(th) - 0.5;
            const double fx = (double(x) + 0.5) / double(tw) - 0.5;
            const int64_t ty0 = std::clamp<int64_t>(int64_t(std::floor(fy)), 0, tiles - 1);
            const int64_t tx0 = std::clamp<int64_t>(int64_t(std::floor(fx)), 0, tiles - 1);
            const int64_t ty1 = std::min(ty0 + 1, tiles - 1);
            const int64_t tx1 = std::min(tx0 + 1, tiles - 1);
            const double wy = std::clamp(fy - double(ty0), 0.0, 1.0);
            const double wx = std::clamp(fx - double(tx0), 0.0, 1.0);
            const double m = (1 - wy) * ((1 - wx) * apply(ty0 * tiles + tx0, value) +
                                         wx * apply(ty0 * tiles + tx1, value)) +
                             wy * ((1 - wx) * apply(ty1 * tiles + tx0, value) +
                                   wx * apply(ty1 * tiles + tx1, value));
            out[size_t(y * W + x)] = float(std::clamp(m, 0.0, 1.0));
        }
    return Tensor<float>::from_data({H, W, 1}, std::move(out));
}

// ---------------------------------------------------------------------------
// Artifact removal: largest 8-connected component retention
// ---------------------------------------------------------------------------

Tensor<float> remove_artifacts(const Tensor<float>& img, float threshold) {
    if (img.rank() != 3 || img.shape()[2] != 1)
        throw DimensionError("remove_artifacts expects (H,W,1), got " + shape_str(img.shape()));
    const int64_t H = img.shape()[0], W = img.shape()[1];
    const auto& v = img.values();
    std::vector<int32_t> label(size_t(H * W), -1);
    int32_t next = 0;
    int64_t best_count = 0;
    int32_t best_label = -1;
    std::vector<int64_t> queue;
    for (int64_t p0 = 0; p0 < H * W; ++p0) {
        if (label[size_t(p0)] != -1 || !(v[size_t(p0)] > threshold)) continue;
        const int32_t id = next++;
        int64_t count = 0;
        queue.assign(1, p0);
        label[size_t(p0)] = id;
        while (!queue.empty()) {
            const int64_t p = queue.back();
            queue.pop_back();
            ++count;
            const int64_t y = p / W, x = p % W;
            for (int64_t dy = -1; dy <= 1; ++dy)
                for (int64_t dx = -1; dx <= 1; ++dx) {
                    const int64_t ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                    const int64_t q = ny * W + nx;
                    if (label[size_t(q)] == -1 && v[size_t(q)] > threshold) {
                        label[size_t(q)] = id;
                        queue.push_back(q);
                    }
                }
        }
        if (count > best_count) {
            best_count = count;
            best_label = id;
        }
    }
    std::vector<float> out(size_t(H * W), 0.0f);
    if (best_label >= 0)
        for (int64_t p = 0; p < H * W; ++p)
            if (label[size_t(p)] == best_label) out[size_t(p)] = v[size_t(p)];
    return Tensor<float>::from_data({H, W, 1}, std::move(out));
}

// ---------------------------------------------------------------------------
// PGM I/O
// ---------------------------------------------------------------------------

void save_pgm(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3 || img.shape()[2] != 1)
        throw DimensionError("save_pgm expects (H,W,1), got " + shape_str(img.shape()));
    const int64_t H = img.shape()[0], W = img.shape()[1];
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "P5\n" << W << " " << H << "\n255\n";
    std::vector<uint8_t> row(size_t(W));
    const auto& v = img.values();
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x)
            row[size_t(x)] =
                uint8_t(std::clamp<long>(std::lround(double(v[size_t(y * W + x)]) * 255.0), 0, 255));
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(W));
    }
    if (!f) throw IoError("PGM write failed: " + path);
}

namespace {
int64_t parse_pgm_int(std::istream& in, const std::string& path) {
    // skip whitespace and `#` comments
    int c = in.peek();
    while (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') {
        if (c == '#') {
            while (c != '\n' && c != EOF) {
                in.get();
                c = in.peek();
            }
        } else {
            in.get();
            c = in.peek();
        }
    }
    int64_t value = -1;
    if (!(in >> value) || value < 0)
        throw FormatError("malformed PGM header in " + path + " at byte offset " +
                          std::to_string(int64_t(in.tellg())));
    return value;
}
}  // namespace

Tensor<float> load_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    char magic[2] = {0, 0};
    f.read(magic, 2);
    if (f.gcount() != 2 || magic[0] != 'P' || magic[1] != '5')
        throw FormatError("bad PGM magic in " + path + " at byte offset 0");
    const int64_t W = parse_pgm_int(f, path);
    const int64_t H = parse_pgm_int(f, path);
    const int64_t maxval = parse_pgm_int(f, path);
    if (W < 1 || H < 1) throw FormatError("bad PGM extents in " + path);
    if (maxval != 255)
        throw FormatError("unsupported PGM maxval " + std::to_string(maxval) + " in " + path +
                          " at byte offset " + std::to_string(int64_t(f.tellg())));
    f.get();  // single whitespace after maxval
    std::vector<uint8_t> bytes(size_t(H * W));
    f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (size_t(f.gcount()) != bytes.size())
        throw FormatError("truncated PGM payload in " + path + " at byte offset " +
                          std::to_string(int64_t(f.tellg())));
    std::vector<float> v(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) v[i] = float(bytes[i]) / 255.0f;
    return Tensor<float>::from_data({H, W, 1}, std::move(v));
}

void save_mask_pgm(const std::string& path, const Tensor<float>& mask) {
    Tensor<float> scaled = mask.clone();
    for (auto& v : scaled.values()) v = v >= 0.5f ? 1.0f : 0.0f;
    save_pgm(path, scaled);
}

Tensor<float> load_mask_pgm(const std::string& path) {
    Tensor<float> img = load_pgm(path);
    for (auto& v : img.values()) v = v >= 0.5f ? 1.0f : 0.0f;
    return img;
}

// ---------------------------------------------------------------------------
// Split and dataset directory
// ---------------------------------------------------------------------------

std::pair<std::vector<SegmentationSample>, std::vector<SegmentationSample>> split_by_mass_size(
    const std::vector<SegmentationSample>& samples, int64_t test_threshold_px) {
    std::vector<SegmentationSample> train, test;
    for (const auto& s : samples) {
        if (s.mass_area_px < test_threshold_px) test.push_back(s);
        else train.push_back(s);
    }
    return {train, test};
}

void write_dataset(const std::string& dir, const std::vector<SegmentationSample>& samples,
                   int64_t split_threshold_px) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    fs::create_directories(fs::path(dir) / "masks", ec);
    if (ec) throw IoError("cannot create dataset directories under " + dir);
    std::ofstream manifest(fs::path(dir) / "manifest.csv");
    if (!manifest) throw IoError("cannot write manifest in " + dir);
    manifest << "id,mass_area_px,split\n";
    for (const auto& s : samples) {
        save_pgm((fs::path(dir) / "images" / (s.id + ".pgm")).string(), s.image);
        save_mask_pgm((fs::path(dir) / "masks" / (s.id + ".pgm")).string(), s.mask);
        manifest << s.id << "," << s.mass_area_px << ","
                 << (s.mass_area_px < split_threshold_px ? "test" : "train") << "\n";
    }
    if (!manifest) throw IoError("manifest write failed in " + dir);
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest.csv");
    if (!manifest) throw IoError("cannot read manifest.csv in " + dir);
    std::string line;
    if (!std::getline(manifest, line) || line.rfind("id,", 0) != 0)
        throw FormatError("manifest.csv in " + dir + " is missing its header row");
    Dataset ds;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id, area_s, split;
        if (!std::getline(row, id, ',') || !std::getline(row, area_s, ',') ||
            !std::getline(row, split))
            throw FormatError("malformed manifest row: " + line);
        SegmentationSample s;
        s.id = id;
        s.image = load_pgm((fs::path(dir) / "images" / (id + ".pgm")).string());
        s.mask = load_mask_pgm((fs::path(dir) / "masks" / (id + ".pgm")).string());
        if (s.image.shape() != s.mask.shape())
            throw DimensionError("image/mask shape mismatch for sample " + id);
        int64_t area = 0;
        for (float v : s.mask.values()) area += v != 0.0f ? 1 : 0;
        s.mass_area_px = area;
        if (split == "test") ds.test.push_back(std::move(s));
        else if (split == "train") ds.train.push_back(std::move(s));
        else throw FormatError("unknown split '" + split + "' for sample " + id);
    }
    return ds;
}

}  // namespace sft

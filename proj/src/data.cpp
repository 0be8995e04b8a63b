#include "losslab/data.hpp"

#include <cmath>
#include <fstream>

#include "losslab/util.hpp"

namespace losslab {

Batch gather(const Dataset& d, std::span<const size_t> idx) {
    const int64_t stride = d.sample_numel();
    Batch b;
    std::vector<int64_t> shape = d.features.shape;
    shape[0] = static_cast<int64_t>(idx.size());
    b.x = Tensor(std::move(shape));
    b.labels.reserve(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        const size_t row = idx[i];
        if (row >= static_cast<size_t>(d.size()))
            throw std::out_of_range("gather: row " + std::to_string(row) + " outside dataset of " +
                                    std::to_string(d.size()));
        std::copy(d.features.data.begin() + static_cast<std::ptrdiff_t>(row * stride),
                  d.features.data.begin() + static_cast<std::ptrdiff_t>((row + 1) * stride),
                  b.x.data.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(stride)));
        b.labels.push_back(d.labels[row]);
    }
    return b;
}

Batch chunk(const Dataset& d, int64_t begin, int64_t count) {
    if (begin < 0 || count < 1 || begin + count > d.size())
        throw std::out_of_range("chunk: [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside dataset of " +
                                std::to_string(d.size()));
    const int64_t stride = d.sample_numel();
    Batch b;
    std::vector<int64_t> shape = d.features.shape;
    shape[0] = count;
    b.x = Tensor(std::move(shape));
    std::copy(d.features.data.begin() + static_cast<std::ptrdiff_t>(begin * stride),
              d.features.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride),
              b.x.data.begin());
    b.labels.assign(d.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    d.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return b;
}

Dataset prefix(const Dataset& d, int64_t n) {
    Batch b = chunk(d, 0, std::min(n, d.size()));
    Dataset out;
    out.features = std::move(b.x);
    out.labels = std::move(b.labels);
    out.classes = d.classes;
    out.split = d.split;
    return out;
}

SyntheticKind synthetic_kind_from(const std::string& name) {
    if (name == "two-moons") return SyntheticKind::two_moons;
    if (name == "gaussian-blobs") return SyntheticKind::gaussian_blobs;
    if (name == "spirals") return SyntheticKind::spirals;
    throw std::invalid_argument("unknown synthetic dataset '" + name +
                                "' (want two-moons, gaussian-blobs, or spirals)");
}

const char* to_string(SyntheticKind k) {
    switch (k) {
        case SyntheticKind::two_moons: return "two-moons";
        case SyntheticKind::gaussian_blobs: return "gaussian-blobs";
        case SyntheticKind::spirals: return "spirals";
    }
    return "?";
}

Dataset make_synthetic(SyntheticKind kind, int64_t n, double noise, uint64_t seed,
                       std::string split) {
    if (n < 2) throw std::invalid_argument("make_synthetic: need n >= 2");
    if (noise < 0.0) throw std::invalid_argument("make_synthetic: noise must be >= 0");
    constexpr double kPi = 3.14159265358979323846;

    Dataset d;
    d.classes = 2;
    d.split = std::move(split);
    d.features = Tensor({n, 2});
    d.labels.assign(static_cast<size_t>(n), 0);
    Rng64 rng(seed);

    const int64_t n0 = (n + 1) / 2;
    for (int64_t i = 0; i < n; ++i) {
        const int cls = i < n0 ? 0 : 1;
        double px = 0.0, py = 0.0;
        switch (kind) {
            case SyntheticKind::two_moons: {
                const double t = kPi * rng.uniform01();
                if (cls == 0) {
                    px = std::cos(t);
                    py = std::sin(t);
                } else {
                    px = 1.0 - std::cos(t);
                    py = 0.5 - std::sin(t);
                }
                break;
            }
            case SyntheticKind::gaussian_blobs:
                px = cls == 0 ? -1.0 : 1.0;
                py = 0.0;
                break;
            case SyntheticKind::spirals: {
                const double t = rng.uniform01();
                const double r = 0.2 + 1.8 * t;
                const double a = 3.0 * kPi * t + (cls == 0 ? 0.0 : kPi);
                px = r * std::cos(a);
                py = r * std::sin(a);
                break;
            }
        }
        px += noise * rng.gaussian();
        py += noise * rng.gaussian();
        d.features.data[static_cast<size_t>(2 * i)] = px;
        d.features.data[static_cast<size_t>(2 * i + 1)] = py;
        d.labels[static_cast<size_t>(i)] = cls;
    }
    return d;
}

TrainTest make_synthetic_pair(SyntheticKind kind, int64_t n_train, int64_t n_test, double noise,
                              uint64_t seed) {
    // golden-ratio offsets decorrelate the two streams from one user seed
    TrainTest tt;
    tt.train = make_synthetic(kind, n_train, noise, seed * 0x9e3779b97f4a7c15ULL + 1, "train");
    tt.test = make_synthetic(kind, n_test, noise, seed * 0x9e3779b97f4a7c15ULL + 2, "test");
    return tt;
}

namespace {

uint32_t read_u32be(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
        throw IdxTruncated("IDX file truncated while reading header: " + path);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

std::vector<unsigned char> read_payload(std::ifstream& f, size_t count, const std::string& path) {
    std::vector<unsigned char> buf(count);
    if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count)))
        throw IdxTruncated("IDX file truncated: expected " + std::to_string(count) +
                           " payload bytes in " + path);
    return buf;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::string split) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw IdxError("cannot open IDX image file: " + images_path);
    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw IdxError("cannot open IDX label file: " + labels_path);

    const uint32_t magic_i = read_u32be(fi, images_path);
    if (magic_i != 0x00000803u)
        throw IdxBadMagic("bad IDX image magic in " + images_path + ": got " +
                          std::to_string(magic_i) + ", want 2051");
    const uint32_t n_img = read_u32be(fi, images_path);
    const uint32_t rows = read_u32be(fi, images_path);
    const uint32_t cols = read_u32be(fi, images_path);

    const uint32_t magic_l = read_u32be(fl, labels_path);
    if (magic_l != 0x00000801u)
        throw IdxBadMagic("bad IDX label magic in " + labels_path + ": got " +
                          std::to_string(magic_l) + ", want 2049");
    const uint32_t n_lab = read_u32be(fl, labels_path);

    if (n_img != n_lab)
        throw IdxCountMismatch("IDX count mismatch: " + std::to_string(n_img) + " images vs " +
                               std::to_string(n_lab) + " labels");
    if (n_img == 0) throw IdxError("IDX files contain no samples: " + images_path);

    const size_t pixels = static_cast<size_t>(n_img) * rows * cols;
    const auto img = read_payload(fi, pixels, images_path);
    const auto lab = read_payload(fl, n_lab, labels_path);

    Dataset d;
    d.split = std::move(split);
    d.features = Tensor({static_cast<int64_t>(n_img), 1, static_cast<int64_t>(rows),
                         static_cast<int64_t>(cols)});
    for (size_t i = 0; i < pixels; ++i)
        d.features.data[i] = static_cast<double>(img[i]) / 255.0;
    d.labels.reserve(n_lab);
    int maxlab = 0;
    for (size_t i = 0; i < n_lab; ++i) {
        d.labels.push_back(static_cast<int>(lab[i]));
        maxlab = std::max(maxlab, static_cast<int>(lab[i]));
    }
    d.classes = maxlab + 1;
    return d;
}

}  // namespace losslab

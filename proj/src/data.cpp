#include "lrmem/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <zlib.h>

#include "lrmem/rng.hpp"

namespace lrmem {
namespace {

constexpr std::uint64_t kTrajectoryStream = 0xA1;
constexpr std::uint64_t kInputNoiseStream = 0xA2;
constexpr std::uint64_t kTargetNoiseStream = 0xA3;

int element_size(int element_type) {
    switch (element_type) {
        case 0x08: case 0x09: return 1;
        case 0x0B: return 2;
        case 0x0C: case 0x0D: return 4;
        case 0x0E: return 8;
        default: throw std::runtime_error("unsupported element type");
    }
}

std::uint32_t read_u32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void write_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

bool image_like(const IdxTensor& tensor) {
    return tensor.element_type == 0x08 && tensor.dims.size() >= 2;
}

} // namespace

IdxTensor parse_idx(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4) throw std::runtime_error("bad magic: file shorter than 4 bytes");
    if (bytes[0] != 0 || bytes[1] != 0) throw std::runtime_error("bad magic");
    IdxTensor tensor;
    tensor.element_type = bytes[2];
    const int ndim = bytes[3];
    element_size(tensor.element_type); // validates the type code
    if (ndim == 0) throw std::runtime_error("bad magic: zero dimensions");

    const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndim);
    if (bytes.size() < header)
        throw std::runtime_error("truncated header: missing " +
                                 std::to_string(header - bytes.size()) + " bytes");
    std::size_t count = 1;
    for (int d = 0; d < ndim; ++d) {
        const std::uint32_t dim = read_u32(bytes.data() + 4 + 4 * d);
        tensor.dims.push_back(static_cast<int>(dim));
        count *= dim;
    }
    const std::size_t expected = header + count * element_size(tensor.element_type);
    if (bytes.size() < expected)
        throw std::runtime_error("truncated payload: missing " +
                                 std::to_string(expected - bytes.size()) + " bytes");
    if (bytes.size() > expected)
        throw std::runtime_error("trailing data: " +
                                 std::to_string(bytes.size() - expected) +
                                 " extra bytes");

    tensor.values.resize(count);
    const unsigned char* p = bytes.data() + header;
    switch (tensor.element_type) {
        case 0x08:
            for (std::size_t i = 0; i < count; ++i) tensor.values[i] = p[i];
            break;
        case 0x09:
            for (std::size_t i = 0; i < count; ++i)
                tensor.values[i] = static_cast<signed char>(p[i]);
            break;
        case 0x0B:
            for (std::size_t i = 0; i < count; ++i)
                tensor.values[i] = static_cast<std::int16_t>(
                    (std::uint16_t(p[2 * i]) << 8) | p[2 * i + 1]);
            break;
        case 0x0C:
            for (std::size_t i = 0; i < count; ++i)
                tensor.values[i] = static_cast<std::int32_t>(read_u32(p + 4 * i));
            break;
        case 0x0D:
            for (std::size_t i = 0; i < count; ++i) {
                const std::uint32_t bits = read_u32(p + 4 * i);
                float f;
                std::memcpy(&f, &bits, sizeof f);
                tensor.values[i] = f;
            }
            break;
        case 0x0E:
            for (std::size_t i = 0; i < count; ++i) {
                std::uint64_t bits = 0;
                for (int b = 0; b < 8; ++b) bits = (bits << 8) | p[8 * i + b];
                double d;
                std::memcpy(&d, &bits, sizeof d);
                tensor.values[i] = d;
            }
            break;
    }
    if (image_like(tensor))
        for (double& v : tensor.values) v /= 255.0;
    return tensor;
}

std::vector<unsigned char> serialize_idx(const IdxTensor& tensor) {
    if (tensor.dims.empty()) throw std::runtime_error("tensor has zero dimensions");
    if (tensor.dims.size() > 255) throw std::runtime_error("too many dimensions");
    std::size_t count = 1;
    for (int d : tensor.dims) {
        if (d < 0) throw std::runtime_error("negative dimension");
        count *= static_cast<std::size_t>(d);
    }
    if (tensor.values.size() != count)
        throw std::runtime_error("value count does not match dimensions");

    std::vector<unsigned char> out;
    out.reserve(4 + 4 * tensor.dims.size() + count * element_size(tensor.element_type));
    out.push_back(0);
    out.push_back(0);
    out.push_back(static_cast<unsigned char>(tensor.element_type));
    out.push_back(static_cast<unsigned char>(tensor.dims.size()));
    for (int d : tensor.dims) write_u32(out, static_cast<std::uint32_t>(d));

    const bool rescale = image_like(tensor);
    for (double v : tensor.values) {
        switch (tensor.element_type) {
            case 0x08: {
                const double raw = rescale ? v * 255.0 : v;
                out.push_back(static_cast<unsigned char>(
                    std::clamp(std::lround(raw), 0L, 255L)));
                break;
            }
            case 0x09:
                out.push_back(static_cast<unsigned char>(static_cast<signed char>(
                    std::clamp(std::lround(v), -128L, 127L))));
                break;
            case 0x0B: {
                const auto s = static_cast<std::int16_t>(
                    std::clamp(std::lround(v), -32768L, 32767L));
                out.push_back(static_cast<unsigned char>(std::uint16_t(s) >> 8));
                out.push_back(static_cast<unsigned char>(s));
                break;
            }
            case 0x0C:
                write_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(
                                   std::llround(v))));
                break;
            case 0x0D: {
                const float f = static_cast<float>(v);
                std::uint32_t bits;
                std::memcpy(&bits, &f, sizeof bits);
                write_u32(out, bits);
                break;
            }
            case 0x0E: {
                std::uint64_t bits;
                std::memcpy(&bits, &v, sizeof bits);
                for (int b = 7; b >= 0; --b)
                    out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
                break;
            }
            default:
                throw std::runtime_error("unsupported element type");
        }
    }
    return out;
}

bool is_gzip(const std::vector<unsigned char>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& bytes) {
    z_stream strm{};
    if (inflateInit2(&strm, 15 + 32) != Z_OK)
        throw std::runtime_error("gzip: inflateInit failed");
    std::vector<unsigned char> out;
    std::vector<unsigned char> chunk(1 << 16);
    strm.next_in = const_cast<Bytef*>(bytes.data());
    strm.avail_in = static_cast<uInt>(bytes.size());
    int rc = Z_OK;
    do {
        strm.next_out = chunk.data();
        strm.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw std::runtime_error("gzip: corrupt stream");
        }
        out.insert(out.end(), chunk.data(),
                   chunk.data() + (chunk.size() - strm.avail_out));
    } while (rc != Z_STREAM_END);
    inflateEnd(&strm);
    return out;
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

IdxTensor parse_idx_file(const std::string& path) {
    try {
        auto bytes = read_file(path);
        if (is_gzip(bytes)) bytes = gunzip(bytes);
        return parse_idx(bytes);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_idx_file(const IdxTensor& tensor, const std::string& path) {
    const auto bytes = serialize_idx(tensor);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

LabeledDataset load_idx_dataset(const std::string& images_path,
                                const std::string& labels_path) {
    const IdxTensor images = parse_idx_file(images_path);
    const IdxTensor labels = parse_idx_file(labels_path);
    if (images.dims.size() < 2)
        throw std::runtime_error(images_path + ": expected at least 2 dimensions");
    if (labels.dims.size() != 1)
        throw std::runtime_error(labels_path + ": expected a 1-dimensional label vector");
    const int n = images.dims[0];
    if (labels.dims[0] != n)
        throw std::runtime_error("image/label count mismatch: " + std::to_string(n) +
                                 " vs " + std::to_string(labels.dims[0]));
    std::size_t row = 1;
    for (std::size_t d = 1; d < images.dims.size(); ++d)
        row *= static_cast<std::size_t>(images.dims[d]);

    LabeledDataset out;
    out.features = Matrix(n, static_cast<int>(row));
    for (std::size_t i = 0; i < out.features.size(); ++i)
        out.features.data[i] = std::clamp(images.values[i], 0.0, 1.0);
    out.labels.resize(static_cast<std::size_t>(n));
    int max_label = 0;
    for (int i = 0; i < n; ++i) {
        out.labels[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lround(labels.values[static_cast<std::size_t>(i)]));
        max_label = std::max(max_label, out.labels[static_cast<std::size_t>(i)]);
    }
    out.num_classes = max_label + 1;
    return out;
}

LabeledDataset make_binary_task(const LabeledDataset& dataset, int class_a, int class_b) {
    std::vector<int> rows;
    bool saw_a = false;
    bool saw_b = false;
    for (std::size_t i = 0; i < dataset.labels.size(); ++i) {
        if (dataset.labels[i] == class_a) { saw_a = true; rows.push_back(static_cast<int>(i)); }
        else if (dataset.labels[i] == class_b) { saw_b = true; rows.push_back(static_cast<int>(i)); }
    }
    if (!saw_a) throw std::runtime_error("class not present: " + std::to_string(class_a));
    if (!saw_b) throw std::runtime_error("class not present: " + std::to_string(class_b));

    LabeledDataset out;
    out.num_classes = 2;
    out.features = Matrix(static_cast<int>(rows.size()), dataset.features.cols);
    out.labels.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int c = 0; c < dataset.features.cols; ++c)
            out.features(static_cast<int>(r), c) = dataset.features(rows[r], c);
        out.labels[r] = dataset.labels[static_cast<std::size_t>(rows[r])] == class_a ? 0 : 1;
    }
    return out;
}

LabeledDataset synth_digits_dataset(int classes, int side, int per_class,
                                    std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("need at least 2 classes");
    if (side < 2) throw std::invalid_argument("side must be at least 2");
    if (per_class < 1) throw std::invalid_argument("per_class must be positive");

    const int dim = side * side;
    std::vector<std::vector<double>> prototypes;
    const double mid = (side - 1) / 2.0;
    for (int c = 0; c < classes; ++c) {
        const double alpha = 2.0 * M_PI * c / classes + 0.7;
        const double beta = alpha + 2.4;
        const double y1 = mid + (side / 3.2) * std::sin(alpha);
        const double x1 = mid + (side / 3.2) * std::cos(alpha);
        const double y2 = mid + (side / 4.5) * std::sin(beta);
        const double x2 = mid + (side / 4.5) * std::cos(beta);
        const double s1 = side / 5.0;
        const double s2 = side / 7.0;
        std::vector<double> proto(static_cast<std::size_t>(dim));
        for (int r = 0; r < side; ++r) {
            for (int col = 0; col < side; ++col) {
                const double d1 = (r - y1) * (r - y1) + (col - x1) * (col - x1);
                const double d2 = (r - y2) * (r - y2) + (col - x2) * (col - x2);
                proto[static_cast<std::size_t>(r * side + col)] =
                    std::exp(-d1 / (2.0 * s1 * s1)) + 0.65 * std::exp(-d2 / (2.0 * s2 * s2));
            }
        }
        prototypes.push_back(std::move(proto));
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.15);
    const int n = classes * per_class;
    LabeledDataset out;
    out.num_classes = classes;
    out.features = Matrix(n, dim);
    out.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i % classes;
        out.labels[static_cast<std::size_t>(i)] = label;
        for (int p = 0; p < dim; ++p)
            out.features(i, p) = std::clamp(
                prototypes[static_cast<std::size_t>(label)][static_cast<std::size_t>(p)] +
                    noise(rng),
                0.0, 1.0);
    }
    return out;
}

double payload_scale(PayloadVariant variant) {
    switch (variant) {
        case PayloadVariant::None: return 0.0;
        case PayloadVariant::Light: return 1.0;
        case PayloadVariant::Heavy: return 3.0;
    }
    return 0.0;
}

std::string to_string(PayloadVariant variant) {
    switch (variant) {
        case PayloadVariant::None: return "none";
        case PayloadVariant::Light: return "light";
        case PayloadVariant::Heavy: return "heavy";
    }
    return "none";
}

DynamicsStream synth_dynamics_stream(int n_samples, PayloadVariant variant,
                                     std::uint64_t seed,
                                     const DynamicsGeneratorConfig& config) {
    if (n_samples <= 0) throw std::invalid_argument("n_samples must be positive");

    // Everything that shapes the inputs is drawn from seed-only streams, so
    // variants of the same seed share inputs sample for sample.
    std::mt19937_64 traj_rng(derive_seed(seed, kTrajectoryStream));
    std::uniform_real_distribution<double> amp(config.amp_min, config.amp_max);
    std::uniform_real_distribution<double> omega(config.omega_min, config.omega_max);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);

    const int j = config.joints;
    std::vector<double> a1(j), a2(j), w1(j), w2(j), p1(j), p2(j);
    for (int k = 0; k < j; ++k) {
        a1[k] = amp(traj_rng); w1[k] = omega(traj_rng); p1[k] = phase(traj_rng);
        a2[k] = amp(traj_rng); w2[k] = omega(traj_rng); p2[k] = phase(traj_rng);
    }

    std::mt19937_64 input_rng(derive_seed(seed, kInputNoiseStream));
    std::mt19937_64 target_rng(derive_seed(seed, kTargetNoiseStream));
    std::normal_distribution<double> input_noise(0.0, config.input_noise);
    std::normal_distribution<double> target_noise(0.0, config.target_noise);

    DynamicsStream stream;
    stream.variant = variant;
    stream.seed = seed;
    stream.inputs = Matrix(n_samples, 3 * j);
    stream.targets.resize(static_cast<std::size_t>(n_samples));

    const double scale = payload_scale(variant);
    for (int i = 0; i < n_samples; ++i) {
        const double t = i * stream.sample_period_s;
        std::vector<double> q(j), qd(j), qdd(j);
        for (int k = 0; k < j; ++k) {
            const double s1 = w1[k] * t + p1[k];
            const double s2 = w2[k] * t + p2[k];
            q[k] = a1[k] * std::sin(s1) + a2[k] * std::sin(s2);
            qd[k] = a1[k] * w1[k] * std::cos(s1) + a2[k] * w2[k] * std::cos(s2);
            qdd[k] = -a1[k] * w1[k] * w1[k] * std::sin(s1) -
                     a2[k] * w2[k] * w2[k] * std::sin(s2);
            stream.inputs(i, k) = q[k] + input_noise(input_rng);
            stream.inputs(i, j + k) = qd[k] + input_noise(input_rng);
            stream.inputs(i, 2 * j + k) = qdd[k] + input_noise(input_rng);
        }
        const double base = config.target_offset +
                            config.c_pose * std::sin(q[0]) * std::cos(q[1]) +
                            config.c_cross * std::sin(q[2]) * std::sin(q[3]) +
                            config.c_vel * std::tanh(qd[4]) +
                            config.c_damp * std::tanh(qd[5] * qd[6]) +
                            config.c_inertia * qdd[0];
        const double load = std::cos(q[1]) * (1.0 + 0.3 * std::sin(q[3]));
        stream.targets[static_cast<std::size_t>(i)] =
            base + scale * config.payload_gain * load + target_noise(target_rng);
    }
    return stream;
}

CoordinateStats input_statistics(const Matrix& inputs) {
    CoordinateStats stats;
    stats.mean.assign(static_cast<std::size_t>(inputs.cols), 0.0);
    stats.stddev.assign(static_cast<std::size_t>(inputs.cols), 1.0);
    if (inputs.rows == 0) return stats;
    for (int r = 0; r < inputs.rows; ++r)
        for (int c = 0; c < inputs.cols; ++c)
            stats.mean[static_cast<std::size_t>(c)] += inputs(r, c);
    for (double& m : stats.mean) m /= inputs.rows;
    for (int c = 0; c < inputs.cols; ++c) {
        double ss = 0.0;
        for (int r = 0; r < inputs.rows; ++r) {
            const double d = inputs(r, c) - stats.mean[static_cast<std::size_t>(c)];
            ss += d * d;
        }
        const double sd = std::sqrt(ss / inputs.rows);
        stats.stddev[static_cast<std::size_t>(c)] = sd < 1e-12 ? 1.0 : sd;
    }
    return stats;
}

void standardize_inputs(Matrix& inputs, const CoordinateStats& stats) {
    if (stats.mean.size() != static_cast<std::size_t>(inputs.cols))
        throw std::invalid_argument("statistics dimension mismatch");
    for (int r = 0; r < inputs.rows; ++r)
        for (int c = 0; c < inputs.cols; ++c)
            inputs(r, c) = (inputs(r, c) - stats.mean[static_cast<std::size_t>(c)]) /
                           stats.stddev[static_cast<std::size_t>(c)];
}

Batch as_batch(const LabeledDataset& dataset) {
    Batch b;
    b.inputs = dataset.features;
    b.labels = dataset.labels;
    return b;
}

Batch as_batch(const DynamicsStream& stream) {
    Batch b;
    b.inputs = stream.inputs;
    b.targets = stream.targets;
    return b;
}

BatchIterator::BatchIterator(Batch source, int batch_size, bool shuffled,
                             std::uint64_t seed)
    : source_(std::move(source)),
      batch_size_(batch_size),
      shuffled_(shuffled),
      seed_(seed) {
    if (batch_size_ < 1) throw std::invalid_argument("batch size must be positive");
    order_.resize(static_cast<std::size_t>(source_.size()));
    std::iota(order_.begin(), order_.end(), 0);
    if (shuffled_) {
        std::mt19937_64 rng(derive_seed(seed_, pass_));
        std::shuffle(order_.begin(), order_.end(), rng);
    }
}

int BatchIterator::batch_count() const {
    return (source_.size() + batch_size_ - 1) / batch_size_;
}

Batch BatchIterator::batch(int index) const {
    if (index < 0 || index >= batch_count())
        throw std::out_of_range("batch index out of range");
    const int lo = index * batch_size_;
    const int hi = std::min(source_.size(), lo + batch_size_);
    Batch out;
    out.inputs = Matrix(hi - lo, source_.inputs.cols);
    for (int r = lo; r < hi; ++r) {
        const int src = order_[static_cast<std::size_t>(r)];
        for (int c = 0; c < source_.inputs.cols; ++c)
            out.inputs(r - lo, c) = source_.inputs(src, c);
        if (!source_.labels.empty())
            out.labels.push_back(source_.labels[static_cast<std::size_t>(src)]);
        if (!source_.targets.empty())
            out.targets.push_back(source_.targets[static_cast<std::size_t>(src)]);
    }
    return out;
}

Batch BatchIterator::next() {
    if (!has_next()) throw std::out_of_range("iterator exhausted");
    return batch(cursor_++);
}

void BatchIterator::reset() {
    cursor_ = 0;
    if (shuffled_) {
        ++pass_;
        std::mt19937_64 rng(derive_seed(seed_, pass_));
        std::shuffle(order_.begin(), order_.end(), rng);
    }
}

BatchIterator sequential_batches(const DynamicsStream& stream, int batch_size) {
    return BatchIterator(as_batch(stream), batch_size, false, 0);
}

} // namespace lrmem

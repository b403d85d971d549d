#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrmem/matrix.hpp"

namespace lrmem {

// ---------------------------------------------------------------------------
// IDX tensor files (the classic big-endian digit-file container), optionally
// gzip-compressed on disk.

struct IdxTensor {
    int element_type = 0x08; // 0x08 ubyte, 0x09 sbyte, 0x0B i16, 0x0C i32, 0x0D f32, 0x0E f64
    std::vector<int> dims;
    std::vector<double> values; // flattened, last dimension fastest
};

// Decode an IDX payload. Unsigned-byte tensors with two or more dimensions
// are treated as images and rescaled to [0,1]; one-dimensional ubyte tensors
// (label vectors) keep their raw values.
IdxTensor parse_idx(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> serialize_idx(const IdxTensor& tensor);

// File helpers; parse_idx_file transparently inflates gzip files.
IdxTensor parse_idx_file(const std::string& path);
void write_idx_file(const IdxTensor& tensor, const std::string& path);

bool is_gzip(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> gunzip(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_file(const std::string& path);

// ---------------------------------------------------------------------------
// Labeled image datasets.

struct LabeledDataset {
    Matrix features; // N x D, values in [0,1]
    std::vector<int> labels;
    int num_classes = 0;
};

// Pair an image tensor (N x r x c or N x D) with a label vector.
LabeledDataset load_idx_dataset(const std::string& images_path,
                                const std::string& labels_path);

// Keep only rows labeled class_a or class_b, relabeled 0/1, order preserved.
LabeledDataset make_binary_task(const LabeledDataset& dataset, int class_a, int class_b);

// Image-like stand-in when no IDX files are supplied: one noisy two-blob
// prototype per class, classes interleaved so consecutive rows mix labels.
LabeledDataset synth_digits_dataset(int classes, int side, int per_class,
                                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic sequential regression stream: smooth 7-joint trajectories mapped
// to a torque-like scalar with a variant-dependent payload term.

enum class PayloadVariant { None, Light, Heavy };

double payload_scale(PayloadVariant variant); // 0, 1, 3
std::string to_string(PayloadVariant variant);

// Constants of the stream generator. Fixed so streams reproduce across
// releases; bump version when any constant changes.
struct DynamicsGeneratorConfig {
    int version = 1;
    int joints = 7;
    double amp_min = 0.3, amp_max = 1.2;     // sinusoid amplitudes
    double omega_min = 4.0, omega_max = 9.0; // angular frequencies, rad/s
    double input_noise = 0.01;
    double target_noise = 0.2;
    double target_offset = 32.0;
    double payload_gain = 1.5;
    double c_pose = 1.0;     // sin/cos pose coupling
    double c_cross = 0.8;    // joint-product coupling
    double c_vel = 0.8;      // velocity (tanh) term
    double c_damp = 0.5;     // velocity-product damping
    double c_inertia = 0.01; // acceleration term
};

struct DynamicsStream {
    Matrix inputs;               // N x 21: positions, velocities, accelerations
    std::vector<double> targets; // N torques
    PayloadVariant variant = PayloadVariant::None;
    std::uint64_t seed = 0;
    double sample_period_s = 0.001;
};

// Deterministic under (n_samples, variant, seed). Streams that differ only
// in variant share identical inputs; their targets differ by the payload
// term alone.
DynamicsStream synth_dynamics_stream(int n_samples, PayloadVariant variant,
                                     std::uint64_t seed,
                                     const DynamicsGeneratorConfig& config = {});

// Per-column standardization. Statistics should come from the variant-None
// stream so later variants see honest distribution shift.
struct CoordinateStats {
    std::vector<double> mean;
    std::vector<double> stddev; // entries < 1e-12 are replaced by 1
};

CoordinateStats input_statistics(const Matrix& inputs);
void standardize_inputs(Matrix& inputs, const CoordinateStats& stats);

// ---------------------------------------------------------------------------
// Batching.

// One slice of training data. Classification batches fill `labels`,
// regression batches fill `targets`.
struct Batch {
    Matrix inputs;
    std::vector<int> labels;
    std::vector<double> targets;

    int size() const { return inputs.rows; }
};

Batch as_batch(const LabeledDataset& dataset);
Batch as_batch(const DynamicsStream& stream);

// Fixed-size views over a Batch. Sequential mode visits every sample exactly
// once in source order; shuffled mode permutes sample order per pass.
class BatchIterator {
public:
    BatchIterator(Batch source, int batch_size, bool shuffled = false,
                  std::uint64_t seed = 0);

    int batch_count() const;
    Batch batch(int index) const; // by position in the current order
    bool has_next() const { return cursor_ < batch_count(); }
    Batch next();
    void reset(); // rewinds; reshuffles in shuffled mode

private:
    Batch source_;
    int batch_size_ = 1;
    bool shuffled_ = false;
    std::uint64_t seed_ = 0;
    std::uint64_t pass_ = 0;
    int cursor_ = 0;
    std::vector<int> order_;
};

BatchIterator sequential_batches(const DynamicsStream& stream, int batch_size);

} // namespace lrmem

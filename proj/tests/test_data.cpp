#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <lrmem/data.hpp>
#include <lrmem/models.hpp>
#include <lrmem/rng.hpp>

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace lrmem;

namespace {

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

std::vector<unsigned char> gzip_bytes(const std::vector<unsigned char>& raw) {
    z_stream zs{};
    REQUIRE(deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 15 + 16, 8,
                         Z_DEFAULT_STRATEGY) == Z_OK);
    std::vector<unsigned char> out(deflateBound(&zs, static_cast<uLong>(raw.size())));
    zs.next_in = const_cast<unsigned char*>(raw.data());
    zs.avail_in = static_cast<uInt>(raw.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    REQUIRE(deflate(&zs, Z_FINISH) == Z_STREAM_END);
    out.resize(zs.total_out);
    deflateEnd(&zs);
    return out;
}

// Hand-rolled IDX blob: ubyte, dims in big-endian, payload appended.
std::vector<unsigned char> idx_ubyte_blob(const std::vector<int>& dims,
                                          const std::vector<unsigned char>& payload) {
    std::vector<unsigned char> bytes{0, 0, 0x08, static_cast<unsigned char>(dims.size())};
    for (int d : dims) {
        bytes.push_back(static_cast<unsigned char>((d >> 24) & 0xff));
        bytes.push_back(static_cast<unsigned char>((d >> 16) & 0xff));
        bytes.push_back(static_cast<unsigned char>((d >> 8) & 0xff));
        bytes.push_back(static_cast<unsigned char>(d & 0xff));
    }
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    return bytes;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("lrmem_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<double> flat_grads(const ParamGroupList& grads) {
    std::vector<double> out;
    for (const auto& g : grads) out.insert(out.end(), g.values.begin(), g.values.end());
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-300);
}

} // namespace

TEST_CASE("idx blobs survive a parse and serialize round trip") {
    std::mt19937_64 rng(31);

    SUBCASE("ubyte image tensor, byte-exact") {
        std::vector<unsigned char> payload(2 * 3 * 4);
        for (auto& b : payload) b = static_cast<unsigned char>(rng() & 0xff);
        const auto blob = idx_ubyte_blob({2, 3, 4}, payload);
        const auto tensor = parse_idx(blob);
        CHECK(tensor.dims == std::vector<int>{2, 3, 4});
        for (double v : tensor.values) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(serialize_idx(tensor) == blob);
    }

    SUBCASE("ubyte label vector stays raw") {
        const std::vector<unsigned char> payload{0, 1, 2, 9, 255};
        const auto blob = idx_ubyte_blob({5}, payload);
        const auto tensor = parse_idx(blob);
        CHECK(tensor.values == std::vector<double>{0, 1, 2, 9, 255});
        CHECK(serialize_idx(tensor) == blob);
    }

    SUBCASE("double tensor keeps exact values") {
        IdxTensor tensor;
        tensor.element_type = 0x0E;
        tensor.dims = {2, 3};
        tensor.values = {1.0 / 3.0, -2.75, 1e-30, 3.14159, 0.0, -1e300};
        const auto back = parse_idx(serialize_idx(tensor));
        CHECK(back.element_type == 0x0E);
        CHECK(back.dims == tensor.dims);
        CHECK(back.values == tensor.values);
    }

    SUBCASE("int32 tensor keeps exact values") {
        IdxTensor tensor;
        tensor.element_type = 0x0C;
        tensor.dims = {4};
        tensor.values = {-2147483648.0, -1.0, 0.0, 2147483647.0};
        const auto back = parse_idx(serialize_idx(tensor));
        CHECK(back.values == tensor.values);
    }
}

TEST_CASE("the idx parser rejects malformed input with a diagnosis") {
    const auto good = idx_ubyte_blob({2, 2}, {1, 2, 3, 4});

    auto bad_magic = good;
    bad_magic[0] = 0x12;
    CHECK(message_of([&] { parse_idx(bad_magic); }).find("bad magic") !=
          std::string::npos);

    auto bad_type = good;
    bad_type[2] = 0x05;
    CHECK(message_of([&] { parse_idx(bad_type); }).find("unsupported element type") !=
          std::string::npos);

    auto short_header = good;
    short_header.resize(7);
    CHECK(message_of([&] { parse_idx(short_header); }).find("truncated header") !=
          std::string::npos);

    auto short_payload = good;
    short_payload.pop_back();
    CHECK(message_of([&] { parse_idx(short_payload); }).find("truncated payload") !=
          std::string::npos);

    auto long_payload = good;
    long_payload.push_back(9);
    CHECK(message_of([&] { parse_idx(long_payload); }).find("trailing data") !=
          std::string::npos);
}

TEST_CASE("gzip detection and decompression round trip") {
    std::vector<unsigned char> raw(1000);
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<unsigned char>((i * 7 + 3) & 0xff);
    const auto gz = gzip_bytes(raw);
    CHECK(is_gzip(gz));
    CHECK(!is_gzip(raw));
    CHECK(gunzip(gz) == raw);
}

TEST_CASE("idx files load transparently with and without gzip") {
    const auto dir = temp_dir("idx_files");

    std::vector<unsigned char> pixels(6 * 4 * 4);
    std::mt19937_64 rng(5);
    for (auto& b : pixels) b = static_cast<unsigned char>(rng() & 0xff);
    const auto image_blob = idx_ubyte_blob({6, 4, 4}, pixels);
    const auto label_blob = idx_ubyte_blob({6}, {0, 1, 2, 0, 1, 2});

    const auto plain_path = dir / "images.idx3-ubyte";
    const auto gz_path = dir / "images.idx3-ubyte.gz";
    const auto label_path = dir / "labels.idx1-ubyte";
    std::ofstream(plain_path, std::ios::binary)
        .write(reinterpret_cast<const char*>(image_blob.data()),
               static_cast<std::streamsize>(image_blob.size()));
    const auto gz = gzip_bytes(image_blob);
    std::ofstream(gz_path, std::ios::binary)
        .write(reinterpret_cast<const char*>(gz.data()),
               static_cast<std::streamsize>(gz.size()));
    std::ofstream(label_path, std::ios::binary)
        .write(reinterpret_cast<const char*>(label_blob.data()),
               static_cast<std::streamsize>(label_blob.size()));

    const auto plain = load_idx_dataset(plain_path.string(), label_path.string());
    const auto zipped = load_idx_dataset(gz_path.string(), label_path.string());
    CHECK(plain.features.rows == 6);
    CHECK(plain.features.cols == 16);
    CHECK(plain.num_classes == 3);
    CHECK(plain.labels == std::vector<int>{0, 1, 2, 0, 1, 2});
    CHECK(plain.features.data == zipped.features.data);
    for (double v : plain.features.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const auto missing = message_of(
        [&] { load_idx_dataset((dir / "nope.idx").string(), label_path.string()); });
    CHECK(missing.find("nope.idx") != std::string::npos);

    std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic digit datasets are deterministic and unit scaled") {
    const auto a = synth_digits_dataset(5, 8, 12, 77);
    const auto b = synth_digits_dataset(5, 8, 12, 77);
    const auto c = synth_digits_dataset(5, 8, 12, 78);
    CHECK(a.features.rows == 60);
    CHECK(a.features.cols == 64);
    CHECK(a.num_classes == 5);
    CHECK(a.features.data == b.features.data);
    CHECK(a.labels == b.labels);
    CHECK(a.features.data != c.features.data);
    for (double v : a.features.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // every class appears equally often
    std::vector<int> counts(5, 0);
    for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
    for (int n : counts) CHECK(n == 12);
}

TEST_CASE("binary tasks keep order and relabel to zero and one") {
    const auto base = synth_digits_dataset(5, 6, 10, 3);
    const auto task = make_binary_task(base, 1, 3);
    CHECK(task.features.rows == 20);
    CHECK(task.num_classes == 2);
    std::size_t cursor = 0;
    for (int r = 0; r < base.features.rows; ++r) {
        const int l = base.labels[static_cast<std::size_t>(r)];
        if (l != 1 && l != 3) continue;
        CHECK(task.labels[cursor] == (l == 3 ? 1 : 0));
        for (int c = 0; c < base.features.cols; ++c)
            CHECK(task.features(static_cast<int>(cursor), c) == base.features(r, c));
        ++cursor;
    }
    CHECK(cursor == 20);
    CHECK_THROWS_AS(make_binary_task(base, 1, 9), std::exception);
}

TEST_CASE("dynamics streams are deterministic under seed and config") {
    const auto a = synth_dynamics_stream(500, PayloadVariant::None, 4);
    const auto b = synth_dynamics_stream(500, PayloadVariant::None, 4);
    const auto c = synth_dynamics_stream(500, PayloadVariant::None, 5);
    CHECK(a.inputs.data == b.inputs.data);
    CHECK(a.targets == b.targets);
    CHECK(a.inputs.data != c.inputs.data);
    CHECK(a.inputs.cols == 21);
    CHECK(a.inputs.rows == 500);
}

TEST_CASE("payload variants share inputs and differ only in the load term") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const auto none = synth_dynamics_stream(400, PayloadVariant::None, seed);
        const auto light = synth_dynamics_stream(400, PayloadVariant::Light, seed);
        const auto heavy = synth_dynamics_stream(400, PayloadVariant::Heavy, seed);
        CHECK(none.inputs.data == light.inputs.data);
        CHECK(none.inputs.data == heavy.inputs.data);
        CHECK(none.targets != light.targets);
        // the payload term scales linearly with the variant factor
        for (std::size_t i = 0; i < none.targets.size(); ++i) {
            const double light_shift = light.targets[i] - none.targets[i];
            const double heavy_shift = heavy.targets[i] - none.targets[i];
            CHECK(std::abs(heavy_shift - 3.0 * light_shift) <=
                  1e-9 * std::max(1.0, std::abs(heavy_shift)));
        }
    }
}

TEST_CASE("the unloaded stream keeps its target mean in the expected band") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto stream = synth_dynamics_stream(3000, PayloadVariant::None, seed);
        const double mean =
            std::accumulate(stream.targets.begin(), stream.targets.end(), 0.0) /
            static_cast<double>(stream.targets.size());
        CHECK(mean >= 30.0);
        CHECK(mean <= 35.0);
    }
}

TEST_CASE("standardization centers the reference variant") {
    auto stream = synth_dynamics_stream(800, PayloadVariant::None, 6);
    const auto stats = input_statistics(stream.inputs);
    standardize_inputs(stream.inputs, stats);
    for (int c = 0; c < stream.inputs.cols; ++c) {
        double mean = 0.0, ss = 0.0;
        for (int r = 0; r < stream.inputs.rows; ++r) mean += stream.inputs(r, c);
        mean /= stream.inputs.rows;
        for (int r = 0; r < stream.inputs.rows; ++r) {
            const double d = stream.inputs(r, c) - mean;
            ss += d * d;
        }
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::sqrt(ss / stream.inputs.rows) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("batch iterators cover every sample exactly once per pass") {
    Batch source;
    const int n = 23;
    source.inputs = Matrix(n, 2);
    source.targets.resize(n);
    for (int r = 0; r < n; ++r) {
        source.inputs(r, 0) = r;
        source.inputs(r, 1) = -r;
        source.targets[static_cast<std::size_t>(r)] = 100.0 + r;
    }

    SUBCASE("sequential order is the source order") {
        BatchIterator it(source, 5);
        CHECK(it.batch_count() == 5);
        std::vector<int> seen;
        while (it.has_next()) {
            const Batch b = it.next();
            for (int r = 0; r < b.size(); ++r) {
                seen.push_back(static_cast<int>(b.inputs(r, 0)));
                CHECK(b.targets[static_cast<std::size_t>(r)] ==
                      100.0 + b.inputs(r, 0));
            }
        }
        std::vector<int> expect(n);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(seen == expect);

        it.reset();
        CHECK(it.has_next());
        CHECK(it.next().inputs(0, 0) == 0.0);
    }

    SUBCASE("shuffled passes permute but still cover everything") {
        BatchIterator it(source, 4, true, 99);
        std::vector<int> first_pass;
        while (it.has_next()) {
            const Batch b = it.next();
            for (int r = 0; r < b.size(); ++r)
                first_pass.push_back(static_cast<int>(b.inputs(r, 0)));
        }
        auto sorted = first_pass;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> expect(n);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(sorted == expect);

        it.reset();
        std::vector<int> second_pass;
        while (it.has_next()) {
            const Batch b = it.next();
            for (int r = 0; r < b.size(); ++r)
                second_pass.push_back(static_cast<int>(b.inputs(r, 0)));
        }
        sorted = second_pass;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == expect);
        CHECK(first_pass != second_pass);
    }
}

TEST_CASE("consecutive batch gradients point the same way on fresh networks") {
    double grand = 0.0;
    int seeds_checked = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto stream = synth_dynamics_stream(600, PayloadVariant::None, seed);
        const auto stats = input_statistics(stream.inputs);
        standardize_inputs(stream.inputs, stats);

        MlpNetwork net(MlpSpec{21, {16, 8}, 1, 0.0}, derive_seed(seed, 0xFEED));
        std::mt19937_64 drng(0);

        BatchIterator it(as_batch(stream), 10);
        std::vector<double> prev;
        double mean_cos = 0.0;
        int pairs = 0;
        while (it.has_next()) {
            const auto result = net.loss_and_grad(it.next(), LossKind::MeanSquaredError,
                                                  RunMode::Eval, drng);
            auto flat = flat_grads(result.grads);
            if (!prev.empty()) {
                mean_cos += cosine(prev, flat);
                ++pairs;
            }
            prev = std::move(flat);
        }
        mean_cos /= pairs;
        CHECK(mean_cos > 0.0);
        grand += mean_cos;
        ++seeds_checked;
    }
    CHECK(seeds_checked == 5);
    CHECK(grand / 5.0 > 0.5);
}

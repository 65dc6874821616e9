#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "bridgets/data.hpp"

using namespace bridgets;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& contents) {
        static int counter = 0;
        path = (std::filesystem::temp_directory_path() /
                ("bridgets_data_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++) + ".csv"))
                   .string();
        std::ofstream out(path);
        out << contents;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

Dataset tiny_dataset(std::initializer_list<double> col0,
                     std::initializer_list<double> col1 = {}) {
    Dataset ds;
    ds.channel_names.push_back("a");
    const bool two = col1.size() > 0;
    if (two) ds.channel_names.push_back("b");
    ds.values = Array2(static_cast<int>(col0.size()), two ? 2 : 1);
    int r = 0;
    for (double v : col0) ds.values.at(r++, 0) = v;
    r = 0;
    for (double v : col1) ds.values.at(r++, 1) = v;
    return ds;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("load_csv parses a plain numeric table") {
    TempFile f("a,b\n1,2\n3,4\n");
    const Dataset ds = load_csv(f.path);
    CHECK(ds.channels() == 2);
    CHECK(ds.length() == 2);
    CHECK(ds.values.at(0, 0) == 1.0);
    CHECK(ds.values.at(0, 1) == 2.0);
    CHECK(ds.values.at(1, 0) == 3.0);
    CHECK(ds.values.at(1, 1) == 4.0);
    CHECK(ds.timestamps.empty());
}

TEST_CASE("load_csv treats a leading date column as labels") {
    TempFile f("date,a\n2020-01-01,5\n");
    const Dataset ds = load_csv(f.path);
    CHECK(ds.channels() == 1);
    CHECK(ds.timestamps == std::vector<std::string>{"2020-01-01"});
    CHECK(ds.values.at(0, 0) == 5.0);
}

TEST_CASE("load_csv names the row and column of a bad cell") {
    TempFile f("a,b\n1,x\n");
    try {
        load_csv(f.path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("row 1") != std::string::npos);
        CHECK(msg.find("\"b\"") != std::string::npos);
    }
}

TEST_CASE("load_csv error paths") {
    CHECK_THROWS_AS(load_csv("/nonexistent/nope.csv"), DataError);
    TempFile ragged("a,b\n1,2\n3\n");
    CHECK_THROWS_AS(load_csv(ragged.path), DataError);
    TempFile empty_body("a,b\n");
    CHECK_THROWS_AS(load_csv(empty_body.path), DataError);
    TempFile dup("a,a\n1,2\n");
    CHECK_THROWS_AS(load_csv(dup.path), DataError);
    TempFile inf_cell("a\ninf\n");
    CHECK_THROWS_AS(load_csv(inf_cell.path), DataError);
}

TEST_CASE("save then load round-trips a dataset") {
    Dataset ds = tiny_dataset({1.5, -2.25, 3.0}, {0.5, 0.25, -1.0});
    ds.timestamps = {"t0", "t1", "t2"};
    TempFile f("");
    save_csv(ds, f.path);
    const Dataset back = load_csv(f.path);
    CHECK(back.values.v == ds.values.v);
    CHECK(back.timestamps == ds.timestamps);
    CHECK(back.channel_names == ds.channel_names);
}

TEST_CASE("split sizes follow the floor/remainder rule") {
    const Dataset ds = tiny_dataset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    const DataSplits s = split_and_normalize(ds, 0.7, 0.1, 0.2);
    CHECK(s.train.length() == 7);
    CHECK(s.val.length() == 1);
    CHECK(s.test.length() == 2);
}

TEST_CASE("z-score statistics come from the train split") {
    // Train piece is exactly [0, 2]: mean 1, population std 1.
    const Dataset ds = tiny_dataset({0, 2, 10, 20});
    const DataSplits s = split_and_normalize(ds, 0.5, 0.25, 0.25);
    CHECK(s.stats.mean[0] == doctest::Approx(1.0));
    CHECK(s.stats.std[0] == doctest::Approx(1.0));
    CHECK(s.train.values.at(0, 0) == doctest::Approx(-1.0));
    CHECK(s.train.values.at(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("constant channels clamp the std and normalize to zero") {
    const Dataset ds = tiny_dataset({5, 5, 5, 5});
    const DataSplits s = split_and_normalize(ds, 0.5, 0.25, 0.25);
    CHECK(s.stats.std[0] == 1e-8);
    CHECK(s.train.values.at(0, 0) == 0.0);
    CHECK(s.train.values.at(1, 0) == 0.0);
}

TEST_CASE("normalize/denormalize round-trip") {
    const Dataset ds = synthetic_sinusoid_dataset(64, 3, 11);
    const DataSplits s = split_and_normalize(ds, 0.5, 0.25, 0.25);
    Array2 values = s.test.values;
    s.stats.denormalize(values);
    for (int r = 0; r < values.rows; ++r)
        for (int c = 0; c < values.cols; ++c) {
            const double original = ds.values.at(s.train.length() + s.val.length() + r, c);
            CHECK(std::fabs(values.at(r, c) - original) <=
                  1e-10 * std::max(1.0, std::fabs(original)));
        }
}

TEST_CASE("concatenating raw splits reproduces the dataset exactly") {
    const Dataset ds = synthetic_sinusoid_dataset(53, 2, 3);
    const RawSplits raw = split_chronological(ds, 0.7, 0.1, 0.2);
    std::vector<double> glued;
    for (const Dataset* part : {&raw.train, &raw.val, &raw.test})
        glued.insert(glued.end(), part->values.v.begin(), part->values.v.end());
    CHECK(glued == ds.values.v);
}

TEST_CASE("split rejects bad fractions and empty pieces") {
    const Dataset ds = tiny_dataset({1, 2, 3, 4});
    CHECK_THROWS_AS(split_and_normalize(ds, 0.5, 0.4, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(split_and_normalize(ds, -0.1, 0.6, 0.5), std::invalid_argument);
    const Dataset tiny = tiny_dataset({1, 2});
    CHECK_THROWS_AS(split_and_normalize(tiny, 0.7, 0.1, 0.2), DataError);
}

TEST_CASE("make_windows strides and boundaries") {
    Dataset ds;
    ds.channel_names = {"a"};
    ds.values = Array2(10, 1);
    for (int r = 0; r < 10; ++r) ds.values.at(r, 0) = r;

    const auto w = make_windows(ds, 4, 2);
    REQUIRE(w.size() == 4);
    CHECK(w[0].start_index == 0);
    CHECK(w[1].start_index == 2);
    CHECK(w[3].start_index == 6);
    CHECK(w[3].values.at(3, 0) == 9.0);

    ds.values = Array2(96, 1);
    CHECK(make_windows(ds, 96, 1).size() == 1);
    ds.values = Array2(95, 1);
    CHECK(make_windows(ds, 96, 1).empty());

    CHECK_THROWS_AS(make_windows(ds, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_windows(ds, 4, 0), std::invalid_argument);
}

TEST_CASE("mask degenerate ratios") {
    Rng rng(1);
    const ObservationMask all_obs = gen_mask(8, 3, 0.0, rng);
    CHECK(all_obs.missing_count() == 0);
    const ObservationMask all_miss = gen_mask(8, 3, 1.0, rng);
    CHECK(all_miss.missing_count() == 24);
    CHECK_THROWS_AS(gen_mask(8, 3, 1.5, rng), std::invalid_argument);
}

TEST_CASE("mask is deterministic given the seed") {
    Rng a = Rng::derive(42, "mask");
    Rng b = Rng::derive(42, "mask");
    const ObservationMask ma = gen_mask(96, 7, 0.25, a);
    const ObservationMask mb = gen_mask(96, 7, 0.25, b);
    CHECK(ma.m == mb.m);
    Rng c = Rng::derive(43, "mask");
    CHECK(gen_mask(96, 7, 0.25, c).m != ma.m);
}

TEST_CASE("per-seed missing counts stay inside the binomial bound") {
    // Frozen from the binomial oracle: n=672, p=0.25 -> mean 168,
    // 4*sqrt(n*p*(1-p)) = 44.9.
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng = Rng::derive(seed, "mask");
        const auto count = static_cast<double>(gen_mask(96, 7, 0.25, rng).missing_count());
        CHECK(std::fabs(count - 168.0) <= 45.0);
    }
}

TEST_CASE("per-element missing frequency matches the ratio over many seeds") {
    const double ratio = 0.25;
    const int trials = 10000;
    std::vector<int> missing(96 * 7, 0);
    for (int seed = 0; seed < trials; ++seed) {
        Rng rng = Rng::derive(static_cast<uint64_t>(seed), "mask-marginal");
        const ObservationMask m = gen_mask(96, 7, ratio, rng);
        for (size_t i = 0; i < m.m.size(); ++i) missing[i] += (m.m[i] == 0);
    }
    const double se = std::sqrt(ratio * (1.0 - ratio) / trials);
    for (int count : missing)
        CHECK(std::fabs(static_cast<double>(count) / trials - ratio) <= 4.0 * se);
}

TEST_CASE("exact mask mode hits the rounded count") {
    Rng rng(5);
    const ObservationMask m = gen_mask(96, 7, 0.25, rng, MaskMode::Exact);
    CHECK(m.missing_count() == 168);
    Rng rng2(6);
    CHECK(gen_mask(10, 1, 0.26, rng2, MaskMode::Exact).missing_count() == 3);
}

TEST_CASE("synthetic dataset is reproducible") {
    const Dataset a = synthetic_sinusoid_dataset(128, 4, 9);
    const Dataset b = synthetic_sinusoid_dataset(128, 4, 9);
    CHECK(a.values.v == b.values.v);
}

}  // TEST_SUITE

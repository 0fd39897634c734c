#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "relprox/dataops.hpp"

using namespace relprox;
namespace fs = std::filesystem;

namespace {

DatasetMeta tiny_fine_meta() {
    DatasetMeta m;
    m.classes = 2;
    m.k = 4;
    m.mode = DatasetMode::fine;
    m.seed = 7;
    m.slot_grid = 2;
    m.glyph_side = 8;
    m.image_side = 36;   // margin 6 -> field 24 -> 12px slots
    m.margin = 6;
    m.glyph_vocab = 3;
    m.train_per_class = 3;
    m.test_per_class = 2;
    m.jitter_max = 4;
    return m;
}

// Brute-force bag classifier: nearest glyph id per slot against noiseless
// tiles, then match the multiset against each class.
int bag_classify(const Dataset& ds, const Instance& inst) {
    const DatasetMeta& m = ds.meta;
    int slot = m.slot_size();
    int pad = (slot - m.glyph_side) / 2;
    std::vector<int> found;
    for (int sr = 0; sr < m.slot_grid; ++sr)
        for (int sc = 0; sc < m.slot_grid; ++sc) {
            int r0 = m.margin + sr * slot + pad + inst.nuisance.dy;
            int c0 = m.margin + sc * slot + pad + inst.nuisance.dx;
            int best = -1;
            double best_d = 1e18;
            for (const Glyph& g : ds.glyphs) {
                double d = 0.0;
                for (int r = 0; r < g.side; ++r)
                    for (int c = 0; c < g.side; ++c) {
                        double diff =
                            inst.image[static_cast<size_t>(r0 + r) * m.image_side + c0 + c] -
                            g.tile[static_cast<size_t>(r) * g.side + c];
                        d += diff * diff;
                    }
                if (d < best_d) {
                    best_d = d;
                    best = g.id;
                }
            }
            found.push_back(best);
        }
    std::sort(found.begin(), found.end());
    for (const ClassSpec& spec : ds.classes)
        if (spec.glyph_multiset == found) return spec.class_id;
    return -1;
}

std::vector<char> read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::vector<char>& data) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("relprox_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE_BEGIN("dataops");

TEST_CASE("fine 2x2 dataset: shared multiset, 4-slot difference, 3-view ambiguity") {
    Dataset ds = generate(tiny_fine_meta());
    REQUIRE(ds.classes.size() == 2);
    const auto& a = ds.classes[0];
    const auto& b = ds.classes[1];
    CHECK(a.glyph_multiset == b.glyph_multiset);
    int hamming = 0;
    for (size_t i = 0; i < a.arrangement.size(); ++i)
        hamming += a.arrangement[i] != b.arrangement[i] ? 1 : 0;
    CHECK(hamming == 4);

    // Brute-force: any bag of 3 slot views (position-free) must be
    // realizable in both classes.
    auto bags = [](const std::vector<int>& arr, int m) {
        std::set<std::vector<int>> out;
        int n = static_cast<int>(arr.size());
        for (int mask = 0; mask < (1 << n); ++mask) {
            if (__builtin_popcount(static_cast<unsigned>(mask)) != m) continue;
            std::vector<int> bag;
            for (int i = 0; i < n; ++i)
                if (mask & (1 << i)) bag.push_back(arr[static_cast<size_t>(i)]);
            std::sort(bag.begin(), bag.end());
            out.insert(bag);
        }
        return out;
    };
    for (int m = 0; m < 4; ++m) CHECK(bags(a.arrangement, m) == bags(b.arrangement, m));
}

TEST_CASE("coarse mode: distinct multisets and a perfect bag classifier on noiseless data") {
    DatasetMeta m;
    m.classes = 4;
    m.mode = DatasetMode::coarse;
    m.k = 1;
    m.seed = 11;
    m.noise_sigma = 0.0;  // noiseless per the oracle example
    m.jitter_max = 0;
    m.train_per_class = 2;
    m.test_per_class = 2;
    Dataset ds = generate(m);
    std::set<std::vector<int>> multisets;
    for (const auto& c : ds.classes) multisets.insert(c.glyph_multiset);
    CHECK(multisets.size() == ds.classes.size());
    int correct = 0, total = 0;
    for (const Instance& inst : ds.test) {
        // brightness is still applied; rescale it out for the noiseless oracle
        Instance flat = inst;
        for (float& v : flat.image) v = static_cast<float>(v / inst.nuisance.brightness);
        correct += bag_classify(ds, flat) == inst.label ? 1 : 0;
        ++total;
    }
    CHECK(correct == total);
}

TEST_CASE("generation is byte-identical per seed") {
    Dataset a = generate(tiny_fine_meta());
    Dataset b = generate(tiny_fine_meta());
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].image == b.train[i].image);
    DatasetMeta other = tiny_fine_meta();
    other.seed = 8;
    Dataset c = generate(other);
    bool any_diff = false;
    for (size_t i = 0; i < a.train.size() && !any_diff; ++i)
        any_diff = a.train[i].image != c.train[i].image;
    CHECK(any_diff);
}

TEST_CASE("pixels stay in bounds and glyphs stay inside the image under jitter") {
    Dataset ds = generate(tiny_fine_meta());
    for (const Instance& inst : ds.train) {
        CHECK(std::abs(inst.nuisance.dy) <= ds.meta.jitter_max);
        CHECK(std::abs(inst.nuisance.dx) <= ds.meta.jitter_max);
        for (float v : inst.image) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("generator rejects invalid metas") {
    DatasetMeta m = tiny_fine_meta();
    m.k = 5;  // > slot count of 4
    CHECK_THROWS_AS(generate(m), Error);
    m = tiny_fine_meta();
    m.classes = 3;  // odd in fine mode
    CHECK_THROWS_AS(generate(m), Error);
    m = tiny_fine_meta();
    m.k = 1;  // incompatible with a shared multiset
    CHECK_THROWS_AS(generate(m), Error);
}

TEST_CASE("save/load round trip is exact") {
    fs::path dir = temp_dir("roundtrip");
    Dataset ds = generate(tiny_fine_meta());
    save(ds, dir);
    Dataset back = load(dir);
    CHECK(back.meta.classes == ds.meta.classes);
    CHECK(back.meta.seed == ds.meta.seed);
    REQUIRE(back.train.size() == ds.train.size());
    REQUIRE(back.test.size() == ds.test.size());
    for (size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].label == ds.train[i].label);
        CHECK(back.train[i].image == ds.train[i].image);
        CHECK(back.train[i].nuisance.dy == ds.train[i].nuisance.dy);
        CHECK(back.train[i].nuisance.brightness ==
              doctest::Approx(ds.train[i].nuisance.brightness));
    }
    for (size_t i = 0; i < ds.classes.size(); ++i)
        CHECK(back.classes[i].arrangement == ds.classes[i].arrangement);
    fs::remove_all(dir);
}

TEST_CASE("corrupting one byte of data.bin raises a checksum error") {
    fs::path dir = temp_dir("corrupt");
    save(generate(tiny_fine_meta()), dir);
    auto blob = read_file(dir / "data.bin");
    blob[blob.size() / 2] = static_cast<char>(blob[blob.size() / 2] ^ 0x01);
    write_file(dir / "data.bin", blob);
    try {
        load(dir);
        FAIL("expected checksum error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::checksum);
    }
    fs::remove_all(dir);
}

TEST_CASE("truncated blob and unknown version raise distinct errors") {
    fs::path dir = temp_dir("badfiles");
    save(generate(tiny_fine_meta()), dir);
    auto blob = read_file(dir / "data.bin");
    blob.resize(blob.size() - 8);
    write_file(dir / "data.bin", blob);
    try {
        load(dir);
        FAIL("expected truncated error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::truncated);
    }

    save(generate(tiny_fine_meta()), dir);
    std::ifstream mf(dir / "meta.json");
    std::string meta((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
    mf.close();
    size_t pos = meta.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    meta.replace(pos, std::string("\"format_version\": 1").size(), "\"format_version\": 99");
    std::ofstream out(dir / "meta.json", std::ios::trunc);
    out << meta;
    out.close();
    try {
        load(dir);
        FAIL("expected format_version error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::format_version);
    }
    fs::remove_all(dir);
}

TEST_CASE("bag ambiguity audit: ambiguous below k, determining at slot count") {
    Dataset ds = generate(tiny_fine_meta());
    CHECK(bag_ambiguity_audit(ds, 0).all_ambiguous());
    CHECK(bag_ambiguity_audit(ds, 3).all_ambiguous());
    AmbiguityReport full = bag_ambiguity_audit(ds, ds.meta.slot_count());
    for (const auto& g : full.groups) CHECK(!g.ambiguous);

    DatasetMeta big;
    big.seed = 21;
    big.train_per_class = 1;
    big.test_per_class = 1;
    Dataset defaults = generate(big);  // c=8, k=4, 3x3 grid
    for (int m = 0; m < big.k; ++m) CHECK(bag_ambiguity_audit(defaults, m).all_ambiguous());
    for (const auto& g : bag_ambiguity_audit(defaults, 9).groups) CHECK(!g.ambiguous);
}

TEST_CASE("audit rejects coarse datasets") {
    DatasetMeta m;
    m.classes = 2;
    m.mode = DatasetMode::coarse;
    m.train_per_class = 1;
    m.test_per_class = 1;
    Dataset ds = generate(m);
    CHECK_THROWS_AS(bag_ambiguity_audit(ds, 1), Error);
}

TEST_CASE("default meta produces the documented geometry") {
    DatasetMeta m;
    CHECK(m.slot_size() == 12);
    CHECK(m.slot_count() == 9);
    DatasetMeta t = m;
    t.train_per_class = 1;
    t.test_per_class = 1;
    Dataset ds = generate(t);
    CHECK(ds.glyphs.size() == 12);
    CHECK(ds.classes.size() == 8);
    std::map<int, int> group_sizes;
    for (const auto& c : ds.classes) group_sizes[c.group_id]++;
    for (const auto& [gid, n] : group_sizes) CHECK(n == 2);
    // fine glyph tiles are flat per 2x2 block (mean 0.5)
    for (const Glyph& g : ds.glyphs)
        for (int by = 0; by < g.side; by += 2)
            for (int bx = 0; bx < g.side; bx += 2) {
                double s = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        s += g.tile[static_cast<size_t>(by + dy) * g.side + bx + dx];
                CHECK(s / 4.0 == doctest::Approx(0.5).epsilon(1e-12));
            }
}

TEST_SUITE_END();

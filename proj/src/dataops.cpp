#include "relprox/dataops.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "relprox/rng.hpp"

namespace relprox {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr double kBrightnessLo = 0.8;
constexpr double kBrightnessHi = 1.2;

// Stream ids for the seeded substreams.
enum : uint64_t { kStreamGlyphs = 1, kStreamClasses = 2, kStreamInstances = 3 };

void validate_meta(const DatasetMeta& m) {
    if (m.classes < 1) fail(ErrKind::invalid_argument, "generate: classes must be >= 1");
    if (m.slot_grid < 1) fail(ErrKind::invalid_argument, "generate: slot_grid must be >= 1");
    if (m.k > m.slot_count())
        fail(ErrKind::invalid_argument, "generate: k exceeds slot count");
    if (m.mode == DatasetMode::fine) {
        if (m.classes % 2 != 0)
            fail(ErrKind::invalid_argument,
                 "generate: fine mode needs an even class count (confusable pairs)");
        if (m.k < 2)
            fail(ErrKind::invalid_argument,
                 "generate: fine mode needs k >= 2 (a single changed slot cannot keep the "
                 "glyph multiset shared)");
        if (3 * (m.classes / 2) > m.glyph_vocab)
            fail(ErrKind::invalid_argument,
                 "generate: glyph vocabulary too small; fine mode needs 3 glyphs per group");
    }
    int field = m.image_side - 2 * m.margin;
    if (field <= 0 || field % m.slot_grid != 0)
        fail(ErrKind::invalid_argument,
             "generate: image_side - 2*margin must be a positive multiple of slot_grid");
    if (m.slot_size() < m.glyph_side)
        fail(ErrKind::invalid_argument, "generate: glyphs do not fit in slots");
    if (m.margin < m.jitter_max)
        fail(ErrKind::invalid_argument, "generate: jitter could move glyphs outside the image");
    if (m.train_per_class < 1 || m.test_per_class < 1)
        fail(ErrKind::invalid_argument, "generate: split sizes must be positive");
}

// Fine-mode tiles are zero-mean per 2x2 block around 0.5 so the coarse
// (downsampled) appearance of every glyph is flat; identity lives in the
// high frequencies only. Coarse-mode tiles get a per-glyph mean level so
// classes are separable from the global view alone.
Glyph make_glyph(const DatasetMeta& meta, int id) {
    Glyph g;
    g.id = id;
    g.side = meta.glyph_side;
    g.tile.assign(static_cast<size_t>(g.side) * g.side, 0.0);
    Rng rng = Rng::substream(meta.seed, hash_combine(kStreamGlyphs, static_cast<uint64_t>(id)));
    if (meta.mode == DatasetMode::fine) {
        const double amp = 0.3;
        for (int by = 0; by < g.side; by += 2)
            for (int bx = 0; bx < g.side; bx += 2) {
                double v[4];
                double mean = 0.0;
                for (double& x : v) {
                    x = rng.uniform(-amp, amp);
                    mean += x;
                }
                mean /= 4.0;
                int i = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        g.tile[static_cast<size_t>(by + dy) * g.side + bx + dx] =
                            0.5 + (v[i++] - mean);
            }
    } else {
        double level = 0.3 + 0.5 * (meta.glyph_vocab > 1
                                        ? static_cast<double>(id) / (meta.glyph_vocab - 1)
                                        : 0.5);
        for (double& x : g.tile) x = level + rng.uniform(-0.15, 0.15);
    }
    for (double x : g.tile)
        if (x < 0.0 || x > 1.0) fail(ErrKind::invalid_argument, "glyph tile out of [0,1]");
    return g;
}

// Boustrophedon slot order; consecutive entries are 4-adjacent.
std::vector<int> snake_order(int grid) {
    std::vector<int> order;
    order.reserve(static_cast<size_t>(grid) * grid);
    for (int r = 0; r < grid; ++r) {
        if (r % 2 == 0)
            for (int c = 0; c < grid; ++c) order.push_back(r * grid + c);
        else
            for (int c = grid - 1; c >= 0; --c) order.push_back(r * grid + c);
    }
    return order;
}

std::vector<int> sorted_copy(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// Family of glyph-id multisets over all m-subsets of slots, canonicalized.
std::vector<std::vector<int>> subset_family(const std::vector<int>& arrangement, int m) {
    int n = static_cast<int>(arrangement.size());
    std::vector<std::vector<int>> family;
    std::vector<int> idx(static_cast<size_t>(m));
    // Iterative combination enumeration.
    for (int i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = i;
    if (m == 0) return {std::vector<int>{}};
    while (true) {
        std::vector<int> bag;
        bag.reserve(static_cast<size_t>(m));
        for (int i : idx) bag.push_back(arrangement[static_cast<size_t>(i)]);
        family.push_back(sorted_copy(std::move(bag)));
        int pos = m - 1;
        while (pos >= 0 && idx[static_cast<size_t>(pos)] == n - m + pos) --pos;
        if (pos < 0) break;
        ++idx[static_cast<size_t>(pos)];
        for (int j = pos + 1; j < m; ++j)
            idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
    }
    std::sort(family.begin(), family.end());
    return family;
}

int hamming(const std::vector<int>& a, const std::vector<int>& b) {
    int h = 0;
    for (size_t i = 0; i < a.size(); ++i) h += a[i] != b[i] ? 1 : 0;
    return h;
}

void build_fine_classes(const DatasetMeta& meta, std::vector<ClassSpec>& classes) {
    int groups = meta.classes / 2;
    int slots = meta.slot_count();
    std::vector<int> snake = snake_order(meta.slot_grid);
    for (int g = 0; g < groups; ++g) {
        Rng rng = Rng::substream(meta.seed, hash_combine(kStreamClasses, static_cast<uint64_t>(g)));
        int t0 = 3 * g, t1 = 3 * g + 1, t2 = 3 * g + 2;

        // k support slots taken as a contiguous run of the snake; glyph types
        // alternate along the run so a cyclic shift changes every support slot.
        int anchor = rng.uniform_int(slots - meta.k + 1);
        std::vector<int> support(snake.begin() + anchor, snake.begin() + anchor + meta.k);
        std::vector<int> support_types(static_cast<size_t>(meta.k));
        for (int i = 0; i < meta.k; ++i) support_types[static_cast<size_t>(i)] = (i % 2 == 0) ? t0 : t1;
        if (meta.k % 2 == 1) support_types[static_cast<size_t>(meta.k - 1)] = t2;

        ClassSpec a;
        a.class_id = 2 * g;
        a.group_id = g;
        a.arrangement.assign(static_cast<size_t>(slots), t2);
        for (int i = 0; i < meta.k; ++i)
            a.arrangement[static_cast<size_t>(support[static_cast<size_t>(i)])] =
                support_types[static_cast<size_t>(i)];

        ClassSpec b = a;
        b.class_id = 2 * g + 1;
        for (int i = 0; i < meta.k; ++i)
            b.arrangement[static_cast<size_t>(support[static_cast<size_t>(i)])] =
                support_types[static_cast<size_t>((i + meta.k - 1) % meta.k)];

        a.glyph_multiset = sorted_copy(a.arrangement);
        b.glyph_multiset = sorted_copy(b.arrangement);

        if (a.glyph_multiset != b.glyph_multiset)
            fail(ErrKind::invalid_argument, "generate: group multisets diverged");
        if (hamming(a.arrangement, b.arrangement) < meta.k)
            fail(ErrKind::invalid_argument, "generate: arrangements differ in fewer than k slots");
        for (int m = 1; m < meta.k; ++m)
            if (subset_family(a.arrangement, m) != subset_family(b.arrangement, m))
                fail(ErrKind::invalid_argument,
                     "generate: sub-k view multisets are not identical across the group");

        classes.push_back(std::move(a));
        classes.push_back(std::move(b));
    }
    // Distinct multisets across groups.
    std::set<std::vector<int>> seen;
    for (const auto& c : classes)
        if (c.class_id % 2 == 0 && !seen.insert(c.glyph_multiset).second)
            fail(ErrKind::invalid_argument, "generate: duplicate glyph multiset across groups");
}

void build_coarse_classes(const DatasetMeta& meta, std::vector<ClassSpec>& classes) {
    int slots = meta.slot_count();
    std::set<std::vector<int>> seen;
    for (int c = 0; c < meta.classes; ++c) {
        Rng rng = Rng::substream(meta.seed, hash_combine(kStreamClasses, static_cast<uint64_t>(c)));
        ClassSpec spec;
        spec.class_id = c;
        spec.group_id = c;  // coarse groups are singletons
        spec.arrangement.resize(static_cast<size_t>(slots));
        // Class identity = its dominant glyph; secondary types add texture
        // variety without breaking multiset distinctness.
        int dominant = c % meta.glyph_vocab;
        int second = (c + 5) % meta.glyph_vocab;
        for (int s = 0; s < slots; ++s)
            spec.arrangement[static_cast<size_t>(s)] = (s % 3 == 2) ? second : dominant;
        Rng perm_rng = rng;
        perm_rng.shuffle(spec.arrangement);
        spec.glyph_multiset = sorted_copy(spec.arrangement);
        if (!seen.insert(spec.glyph_multiset).second)
            fail(ErrKind::invalid_argument,
                 "generate: coarse classes exceed the distinct-multiset capacity of the "
                 "vocabulary");
        classes.push_back(std::move(spec));
    }
}

Instance render_instance(const DatasetMeta& meta, const std::vector<Glyph>& glyphs,
                         const ClassSpec& spec, uint64_t stream) {
    Rng rng = Rng::substream(meta.seed, stream);
    Instance inst;
    inst.label = spec.class_id;
    inst.side = meta.image_side;
    inst.nuisance.dy = rng.uniform_int(2 * meta.jitter_max + 1) - meta.jitter_max;
    inst.nuisance.dx = rng.uniform_int(2 * meta.jitter_max + 1) - meta.jitter_max;
    inst.nuisance.brightness = rng.uniform(kBrightnessLo, kBrightnessHi);
    inst.nuisance.noise_seed = rng.next();

    std::vector<double> img(static_cast<size_t>(meta.image_side) * meta.image_side, 0.0);
    int slot = meta.slot_size();
    int pad = (slot - meta.glyph_side) / 2;
    for (int sr = 0; sr < meta.slot_grid; ++sr)
        for (int sc = 0; sc < meta.slot_grid; ++sc) {
            const Glyph& g =
                glyphs[static_cast<size_t>(spec.arrangement[static_cast<size_t>(sr * meta.slot_grid + sc)])];
            int r0 = meta.margin + sr * slot + pad + inst.nuisance.dy;
            int c0 = meta.margin + sc * slot + pad + inst.nuisance.dx;
            for (int r = 0; r < g.side; ++r)
                for (int c = 0; c < g.side; ++c)
                    img[static_cast<size_t>(r0 + r) * meta.image_side + c0 + c] =
                        g.tile[static_cast<size_t>(r) * g.side + c];
        }

    Rng noise(inst.nuisance.noise_seed);
    inst.image.resize(img.size());
    for (size_t i = 0; i < img.size(); ++i) {
        double v = img[i] * inst.nuisance.brightness + meta.noise_sigma * noise.normal();
        v = std::min(1.0, std::max(0.0, v));
        inst.image[i] = static_cast<float>(v);
    }
    return inst;
}

uint32_t blob_crc(const std::vector<char>& blob) {
    return static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(blob.data()), static_cast<uInt>(blob.size())));
}

void append_u32(std::vector<char>& blob, uint32_t v) {
    for (int i = 0; i < 4; ++i) blob.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(const std::vector<char>& blob, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(blob[off + i])) << (8 * i);
    return v;
}

json meta_to_json(const DatasetMeta& m) {
    return json{{"classes", m.classes},
                {"k", m.k},
                {"mode", mode_name(m.mode)},
                {"seed", m.seed},
                {"slot_grid", m.slot_grid},
                {"glyph_side", m.glyph_side},
                {"image_side", m.image_side},
                {"margin", m.margin},
                {"glyph_vocab", m.glyph_vocab},
                {"train_per_class", m.train_per_class},
                {"test_per_class", m.test_per_class},
                {"noise_sigma", m.noise_sigma},
                {"jitter_max", m.jitter_max}};
}

DatasetMeta meta_from_json(const json& j) {
    DatasetMeta m;
    m.classes = j.at("classes").get<int>();
    m.k = j.at("k").get<int>();
    m.mode = mode_from_name(j.at("mode").get<std::string>());
    m.seed = j.at("seed").get<uint64_t>();
    m.slot_grid = j.at("slot_grid").get<int>();
    m.glyph_side = j.at("glyph_side").get<int>();
    m.image_side = j.at("image_side").get<int>();
    m.margin = j.at("margin").get<int>();
    m.glyph_vocab = j.at("glyph_vocab").get<int>();
    m.train_per_class = j.at("train_per_class").get<int>();
    m.test_per_class = j.at("test_per_class").get<int>();
    m.noise_sigma = j.at("noise_sigma").get<double>();
    m.jitter_max = j.at("jitter_max").get<int>();
    return m;
}

}  // namespace

std::string mode_name(DatasetMode m) { return m == DatasetMode::fine ? "fine" : "coarse"; }

DatasetMode mode_from_name(const std::string& s) {
    if (s == "fine") return DatasetMode::fine;
    if (s == "coarse") return DatasetMode::coarse;
    fail(ErrKind::config_bad_value, "mode must be 'fine' or 'coarse', got '" + s + "'");
}

void build_specs(const DatasetMeta& meta, std::vector<Glyph>& glyphs,
                 std::vector<ClassSpec>& classes) {
    validate_meta(meta);
    glyphs.clear();
    classes.clear();
    for (int i = 0; i < meta.glyph_vocab; ++i) glyphs.push_back(make_glyph(meta, i));
    // Tiles must be pairwise distinct.
    for (size_t i = 0; i < glyphs.size(); ++i)
        for (size_t j = i + 1; j < glyphs.size(); ++j) {
            double d2 = 0.0;
            for (size_t p = 0; p < glyphs[i].tile.size(); ++p) {
                double d = glyphs[i].tile[p] - glyphs[j].tile[p];
                d2 += d * d;
            }
            if (d2 <= 0.0) fail(ErrKind::invalid_argument, "generate: duplicate glyph tiles");
        }
    if (meta.mode == DatasetMode::fine)
        build_fine_classes(meta, classes);
    else
        build_coarse_classes(meta, classes);
}

Dataset generate(const DatasetMeta& meta) {
    Dataset ds;
    ds.meta = meta;
    build_specs(meta, ds.glyphs, ds.classes);
    for (int c = 0; c < meta.classes; ++c) {
        for (int i = 0; i < meta.train_per_class; ++i) {
            uint64_t stream = hash_combine(
                kStreamInstances, hash_combine(static_cast<uint64_t>(c) * 2 + 0,
                                               static_cast<uint64_t>(i)));
            ds.train.push_back(render_instance(meta, ds.glyphs, ds.classes[static_cast<size_t>(c)],
                                               stream));
        }
        for (int i = 0; i < meta.test_per_class; ++i) {
            uint64_t stream = hash_combine(
                kStreamInstances, hash_combine(static_cast<uint64_t>(c) * 2 + 1,
                                               static_cast<uint64_t>(i)));
            ds.test.push_back(render_instance(meta, ds.glyphs, ds.classes[static_cast<size_t>(c)],
                                              stream));
        }
    }
    return ds;
}

void save(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<char> blob;
    size_t n = ds.train.size() + ds.test.size();
    size_t px = static_cast<size_t>(ds.meta.image_side) * ds.meta.image_side;
    blob.reserve(n * (4 + px * 4));
    auto put_labels = [&](const std::vector<Instance>& split) {
        for (const Instance& inst : split) append_u32(blob, static_cast<uint32_t>(inst.label));
    };
    put_labels(ds.train);
    put_labels(ds.test);
    size_t pixels_offset = blob.size();
    auto put_pixels = [&](const std::vector<Instance>& split) {
        for (const Instance& inst : split)
            for (float f : inst.image) {
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                append_u32(blob, bits);
            }
    };
    put_pixels(ds.train);
    put_pixels(ds.test);

    json meta = meta_to_json(ds.meta);
    meta["format_version"] = kFormatVersion;
    meta["labels_offset"] = 0;
    meta["labels_count"] = n;
    meta["pixels_offset"] = pixels_offset;
    meta["data_crc32"] = blob_crc(blob);

    std::ofstream bin(dir / "data.bin", std::ios::binary | std::ios::trunc);
    if (!bin) fail(ErrKind::io, "save: cannot write " + (dir / "data.bin").string());
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    bin.close();

    std::ofstream mf(dir / "meta.json", std::ios::trunc);
    if (!mf) fail(ErrKind::io, "save: cannot write " + (dir / "meta.json").string());
    mf << meta.dump(2) << "\n";
}

Dataset load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "meta.json");
    if (!mf) fail(ErrKind::io, "load: missing " + (dir / "meta.json").string());
    json meta_json;
    try {
        mf >> meta_json;
    } catch (const json::exception& e) {
        fail(ErrKind::io, std::string("load: unparseable meta.json: ") + e.what());
    }
    if (!meta_json.contains("format_version") ||
        meta_json.at("format_version").get<int>() != kFormatVersion)
        fail(ErrKind::format_version, "load: unsupported dataset format version");

    Dataset ds;
    ds.meta = meta_from_json(meta_json);
    build_specs(ds.meta, ds.glyphs, ds.classes);

    std::ifstream bin(dir / "data.bin", std::ios::binary);
    if (!bin) fail(ErrKind::io, "load: missing " + (dir / "data.bin").string());
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    size_t n = meta_json.at("labels_count").get<size_t>();
    size_t pixels_offset = meta_json.at("pixels_offset").get<size_t>();
    size_t px = static_cast<size_t>(ds.meta.image_side) * ds.meta.image_side;
    size_t expect = ds.meta.classes *
                    static_cast<size_t>(ds.meta.train_per_class + ds.meta.test_per_class);
    if (n != expect || pixels_offset != n * 4 || blob.size() != n * 4 + n * px * 4)
        fail(ErrKind::truncated, "load: data.bin size does not match meta.json");
    uint32_t crc_expect = meta_json.at("data_crc32").get<uint32_t>();
    if (blob_crc(blob) != crc_expect) fail(ErrKind::checksum, "load: data.bin checksum mismatch");

    size_t idx = 0;
    auto read_split = [&](std::vector<Instance>& split, int per_class, int split_tag) {
        for (int c = 0; c < ds.meta.classes; ++c)
            for (int i = 0; i < per_class; ++i) {
                Instance inst;
                inst.label = static_cast<int>(read_u32(blob, idx * 4));
                inst.side = ds.meta.image_side;
                inst.image.resize(px);
                size_t base = pixels_offset + idx * px * 4;
                for (size_t p = 0; p < px; ++p) {
                    uint32_t bits = read_u32(blob, base + p * 4);
                    float f;
                    std::memcpy(&f, &bits, 4);
                    inst.image[p] = f;
                }
                // Nuisance is a pure function of the meta; reproduce it.
                uint64_t stream = hash_combine(
                    kStreamInstances,
                    hash_combine(static_cast<uint64_t>(c) * 2 + static_cast<uint64_t>(split_tag),
                                 static_cast<uint64_t>(i)));
                Rng rng = Rng::substream(ds.meta.seed, stream);
                inst.nuisance.dy = rng.uniform_int(2 * ds.meta.jitter_max + 1) - ds.meta.jitter_max;
                inst.nuisance.dx = rng.uniform_int(2 * ds.meta.jitter_max + 1) - ds.meta.jitter_max;
                inst.nuisance.brightness = rng.uniform(kBrightnessLo, kBrightnessHi);
                inst.nuisance.noise_seed = rng.next();
                split.push_back(std::move(inst));
                ++idx;
            }
    };
    read_split(ds.train, ds.meta.train_per_class, 0);
    read_split(ds.test, ds.meta.test_per_class, 1);
    return ds;
}

AmbiguityReport bag_ambiguity_audit(const Dataset& ds, int m) {
    if (ds.meta.mode != DatasetMode::fine)
        fail(ErrKind::invalid_argument, "audit: fine-mode dataset required");
    if (m < 0 || m > ds.meta.slot_count())
        fail(ErrKind::invalid_argument, "audit: m out of range");
    std::map<int, std::vector<const ClassSpec*>> groups;
    for (const auto& c : ds.classes) groups[c.group_id].push_back(&c);

    AmbiguityReport report;
    report.m = m;
    for (const auto& [gid, members] : groups) {
        GroupAmbiguity ga;
        ga.group_id = gid;
        for (const ClassSpec* c : members) ga.class_ids.push_back(c->class_id);
        if (m == ds.meta.slot_count()) {
            ga.ambiguous = false;  // full information: positions are known
        } else {
            ga.ambiguous = true;
            auto ref = subset_family(members[0]->arrangement, m);
            for (size_t i = 1; i < members.size(); ++i)
                if (subset_family(members[i]->arrangement, m) != ref) {
                    ga.ambiguous = false;
                    break;
                }
        }
        report.groups.push_back(std::move(ga));
    }
    return report;
}

Grid instance_grid(const Instance& inst) {
    Grid g;
    g.h = inst.side;
    g.w = inst.side;
    g.v.assign(inst.image.begin(), inst.image.end());
    return g;
}

}  // namespace relprox

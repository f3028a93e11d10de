#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/multidim.hpp"

namespace maskdiff {

const char* md_kind_name(MdKind k) {
    switch (k) {
        case MdKind::nonlinear: return "nonlinear";
        case MdKind::swiss_roll: return "swiss_roll";
        case MdKind::moons: return "moons";
        case MdKind::circles: return "circles";
    }
    MD_CHECK(false, "bad dataset kind");
    return "";
}

namespace {

struct RawPoint {
    std::array<double, 3> x{};
    int label = 0;
};

// min-max rescale one generated dimension onto integers 1..100
void scale_dim(std::vector<RawPoint>& pts, int dim) {
    double lo = pts[0].x[dim], hi = pts[0].x[dim];
    for (auto& p : pts) {
        lo = std::min(lo, p.x[dim]);
        hi = std::max(hi, p.x[dim]);
    }
    double span = hi - lo;
    for (auto& p : pts)
        p.x[dim] = (span > 0) ? std::round(1.0 + 99.0 * (p.x[dim] - lo) / span) : 50.0;
}

void fill_random_dim(std::vector<RawPoint>& pts, int dim, Rng& rng) {
    for (auto& p : pts) p.x[dim] = (double)rng.uniform_int(1, 100);
}

// polynomial feature map with random coefficients, thresholded logistic label.
// base features are centred so a fixed coefficient draw stays near class balance.
std::vector<RawPoint> gen_nonlinear(size_t per_class, Rng& rng) {
    constexpr int kFeat = 9;  // u1 u2 u3 u1^2 u2^2 u3^2 u1u2 u1u3 u2u3
    for (int attempt = 0; attempt < 100; attempt++) {
        std::array<double, kFeat> w{};
        for (auto& c : w) c = rng.normal();
        std::vector<RawPoint> cls[2];
        size_t budget = per_class * 2000;
        while (budget-- > 0 && (cls[0].size() < per_class || cls[1].size() < per_class)) {
            RawPoint p;
            for (int d = 0; d < 3; d++) p.x[d] = (double)rng.uniform_int(1, 100);
            std::array<double, 3> u{};
            for (int d = 0; d < 3; d++) u[d] = (p.x[d] - 50.5) / 49.5;
            std::array<double, kFeat> phi{u[0],        u[1],        u[2],
                                          u[0] * u[0], u[1] * u[1], u[2] * u[2],
                                          u[0] * u[1], u[0] * u[2], u[1] * u[2]};
            double z = 0;
            for (int i = 0; i < kFeat; i++) z += w[i] * phi[i];
            int label = 1.0 / (1.0 + std::exp(-z)) > 0.5 ? 1 : 0;
            if (cls[label].size() < per_class) {
                p.label = label;
                cls[label].push_back(p);
            }
        }
        if (cls[0].size() == per_class && cls[1].size() == per_class) {
            std::vector<RawPoint> out = std::move(cls[0]);
            out.insert(out.end(), cls[1].begin(), cls[1].end());
            return out;
        }
        // pathologically one-sided coefficient draw: try fresh coefficients
    }
    throw DataError("nonlinear dataset: could not fill both classes");
}

// points along the classic roll; labels split the roll parameter at its median
std::vector<RawPoint> gen_swiss_roll(size_t per_class, Rng& rng) {
    size_t n = per_class * 2;
    std::vector<RawPoint> pts(n);
    std::vector<double> t(n);
    for (size_t i = 0; i < n; i++) {
        t[i] = 1.5 * std::numbers::pi * (1.0 + 2.0 * rng.uniform());
        pts[i].x = {t[i] * std::cos(t[i]), 21.0 * rng.uniform(), t[i] * std::sin(t[i])};
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; i++) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return t[a] < t[b]; });
    for (size_t r = 0; r < n; r++) pts[order[r]].label = r < per_class ? 0 : 1;
    for (int d = 0; d < 3; d++) scale_dim(pts, d);
    return pts;
}

std::vector<RawPoint> gen_moons(size_t per_class, Rng& rng) {
    std::vector<RawPoint> pts;
    for (int label = 0; label < 2; label++)
        for (size_t i = 0; i < per_class; i++) {
            double t = rng.uniform(0.0, std::numbers::pi);
            RawPoint p;
            if (label == 0)
                p.x = {std::cos(t), std::sin(t), 0.0};
            else
                p.x = {1.0 - std::cos(t), 0.5 - std::sin(t), 0.0};
            p.x[0] += rng.normal() * 0.1;
            p.x[1] += rng.normal() * 0.1;
            p.label = label;
            pts.push_back(p);
        }
    scale_dim(pts, 0);
    scale_dim(pts, 1);
    fill_random_dim(pts, 2, rng);
    return pts;
}

std::vector<RawPoint> gen_circles(size_t per_class, Rng& rng) {
    std::vector<RawPoint> pts;
    for (int label = 0; label < 2; label++) {
        double radius = label == 0 ? 1.0 : 0.5;  // inner circle is the positive class
        for (size_t i = 0; i < per_class; i++) {
            double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
            RawPoint p;
            p.x = {radius * std::cos(t), radius * std::sin(t), 0.0};
            p.x[0] += rng.normal() * 0.1;
            p.x[1] += rng.normal() * 0.1;
            p.label = label;
            pts.push_back(p);
        }
    }
    scale_dim(pts, 0);
    scale_dim(pts, 1);
    fill_random_dim(pts, 2, rng);
    return pts;
}

MdPoint to_point(const RawPoint& r) {
    MdPoint p;
    for (int d = 0; d < 3; d++) {
        int c = (int)std::llround(r.x[d]);
        MD_CHECK(c >= 1 && c <= 100, "coordinate out of range after scaling");
        p.coords[d] = c;
    }
    p.label = r.label;
    return p;
}

}  // namespace

MultiDimDataset gen_multidim_dataset(MdKind kind, uint64_t seed, int n_train, int n_test) {
    MD_CHECK(n_train > 0 && n_test > 0 && n_train % 2 == 0 && n_test % 2 == 0,
             "split sizes must be positive and even");
    MultiDimDataset ds;
    ds.kind = kind;
    ds.seed = seed;
    Rng rng = Rng(seed).fork(std::string("multidim:") + md_kind_name(kind));
    size_t per_class = size_t(n_train + n_test) / 2;
    std::vector<RawPoint> raw;
    switch (kind) {
        case MdKind::nonlinear: raw = gen_nonlinear(per_class, rng); break;
        case MdKind::swiss_roll: raw = gen_swiss_roll(per_class, rng); break;
        case MdKind::moons: raw = gen_moons(per_class, rng); break;
        case MdKind::circles: raw = gen_circles(per_class, rng); break;
    }
    // split each class pool into train/test quotas, then shuffle the splits
    std::vector<MdPoint> pool[2];
    for (auto& r : raw) pool[r.label].push_back(to_point(r));
    MD_CHECK(pool[0].size() == per_class && pool[1].size() == per_class, "class pools uneven");
    for (auto& p : pool) rng.shuffle(p);
    for (int label = 0; label < 2; label++) {
        size_t q_train = size_t(n_train) / 2;
        for (size_t i = 0; i < per_class; i++)
            (i < q_train ? ds.train : ds.test).push_back(pool[label][i]);
    }
    rng.shuffle(ds.train);
    rng.shuffle(ds.test);
    return ds;
}

std::vector<MdPoint> order_examples(const std::vector<MdPoint>& pts, OrderScheme scheme,
                                    const MdPoint& test_point, Rng& rng) {
    std::vector<MdPoint> out = pts;
    if (scheme == OrderScheme::random) {
        rng.shuffle(out);
        return out;
    }
    auto d2 = [&](const MdPoint& p) {
        double s = 0;
        for (int i = 0; i < 3; i++) {
            double d = double(p.coords[i]) - double(test_point.coords[i]);
            s += d * d;
        }
        return s;
    };
    std::stable_sort(out.begin(), out.end(), [&](const MdPoint& a, const MdPoint& b) {
        return scheme == OrderScheme::decreasing_distance ? d2(a) > d2(b) : d2(a) < d2(b);
    });
    return out;
}

void export_multidim_jsonl(const MultiDimDataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& split, const std::vector<MdPoint>& pts) {
        std::string path = dir + "/" + md_kind_name(ds.kind) + ".seed" + std::to_string(ds.seed) +
                           "." + split + ".jsonl";
        std::ofstream f(path, std::ios::binary);
        if (!f.good()) throw DataError("cannot write " + path);
        for (auto& p : pts) {
            nlohmann::json j;
            j["coords"] = p.coords;
            j["label"] = p.label_text();
            f << j.dump() << "\n";
        }
    };
    write("train", ds.train);
    write("test", ds.test);
}

}  // namespace maskdiff

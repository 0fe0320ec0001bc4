#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "mcseg/metrics.hpp"

using namespace mcseg;

namespace {

// set-based oracle
double iou_brute(const Mask& m, const Mask& g) {
    std::set<std::pair<int, int>> ms, gs, uni, inter;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (m.at(y, x)) ms.insert({y, x});
            if (g.at(y, x)) gs.insert({y, x});
        }
    for (const auto& p : ms) {
        uni.insert(p);
        if (gs.count(p)) inter.insert(p);
    }
    for (const auto& p : gs) uni.insert(p);
    if (uni.empty()) return 1.0;
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

// independent boundary extraction + all-pairs distance matching oracle
std::vector<std::pair<int, int>> boundary_brute(const Mask& m) {
    std::vector<std::pair<int, int>> b;
    auto bg = [&](int y, int x) {
        if (y < 0 || y >= m.h || x < 0 || x >= m.w) return true;
        return m.at(y, x) == 0;
    };
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x) &&
                (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)))
                b.emplace_back(y, x);
    return b;
}

double boundary_f_brute(const Mask& m, const Mask& g, int tol) {
    const auto mb = boundary_brute(m);
    const auto gb = boundary_brute(g);
    if (mb.empty() && gb.empty()) return 1.0;
    if (mb.empty() || gb.empty()) return 0.0;
    auto matched = [&](const std::vector<std::pair<int, int>>& from,
                       const std::vector<std::pair<int, int>>& to) {
        int hits = 0;
        for (const auto& [y, x] : from) {
            bool hit = false;
            for (const auto& [yy, xx] : to) {
                const int dy = y - yy, dx = x - xx;
                if (dy * dy + dx * dx <= tol * tol) {
                    hit = true;
                    break;
                }
            }
            hits += hit;
        }
        return static_cast<double>(hits) / static_cast<double>(from.size());
    };
    const double p = matched(mb, gb);
    const double r = matched(gb, mb);
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

Mask random_mask(Rng& rng, int h, int w, double density) {
    Mask m = Mask::zeros(h, w);
    for (auto& v : m.v) v = rng.uniform() < density ? 1 : 0;
    return m;
}

Mask square_mask(int h, int w, int y0, int x0, int side) {
    Mask m = Mask::zeros(h, w);
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) m.at(y, x) = 1;
    return m;
}

}  // namespace

TEST_CASE("iou") {
    SECTION("identical nonempty masks score 1") {
        auto m = square_mask(8, 8, 2, 2, 3);
        REQUIRE(iou(m, m) == 1.0);
    }
    SECTION("disjoint nonempty masks score 0") {
        auto m = square_mask(8, 8, 0, 0, 2);
        auto g = square_mask(8, 8, 5, 5, 2);
        REQUIRE(iou(m, g) == 0.0);
    }
    SECTION("one shared pixel out of four total") {
        Mask m = Mask::zeros(4, 4);
        m.at(1, 1) = 1;
        m.at(1, 2) = 1;
        Mask g = Mask::zeros(4, 4);
        g.at(1, 2) = 1;
        g.at(2, 2) = 1;
        g.at(3, 3) = 1;
        REQUIRE(iou(m, g) == 0.25);
    }
    SECTION("both empty scores 1 by convention") {
        REQUIRE(iou(Mask::zeros(5, 5), Mask::zeros(5, 5)) == 1.0);
    }
    SECTION("empty vs nonempty scores 0") {
        REQUIRE(iou(Mask::zeros(5, 5), square_mask(5, 5, 1, 1, 2)) == 0.0);
    }
    SECTION("rejects shape mismatch") {
        REQUIRE_THROWS_AS(iou(Mask::zeros(4, 4), Mask::zeros(4, 5)), ShapeError);
    }
}

TEST_CASE("boundary_f") {
    SECTION("identical nonempty masks score 1") {
        auto m = square_mask(16, 16, 4, 4, 6);
        REQUIRE(boundary_f(m, m) == 1.0);
    }
    SECTION("empty vs nonempty scores 0") {
        REQUIRE(boundary_f(Mask::zeros(16, 16), square_mask(16, 16, 4, 4, 6)) == 0.0);
        REQUIRE(boundary_f(square_mask(16, 16, 4, 4, 6), Mask::zeros(16, 16)) == 0.0);
    }
    SECTION("both empty scores 1") {
        REQUIRE(boundary_f(Mask::zeros(16, 16), Mask::zeros(16, 16)) == 1.0);
    }
    SECTION("1 px shift of a 10x10 square matches fully at tolerance 2") {
        auto m = square_mask(32, 32, 8, 8, 10);
        auto g = square_mask(32, 32, 8, 9, 10);
        REQUIRE(boundary_f(m, g, 2) == 1.0);
    }
    SECTION("default tolerance follows the image diagonal") {
        REQUIRE(default_boundary_tolerance(480, 854) ==
                static_cast<int>(std::ceil(0.0075 * std::hypot(480.0, 854.0))));
    }
}

TEST_CASE("metric properties") {
    Rng rng(17);
    SECTION("symmetry under swapping the masks") {
        for (int rep = 0; rep < 50; ++rep) {
            auto m = random_mask(rng, 12, 12, rng.uniform());
            auto g = random_mask(rng, 12, 12, rng.uniform());
            REQUIRE(iou(m, g) == iou(g, m));
            REQUIRE(boundary_f(m, g, 2) == Catch::Approx(boundary_f(g, m, 2)).margin(1e-15));
        }
    }
    SECTION("translation invariance away from borders") {
        auto m = square_mask(24, 24, 4, 4, 5);
        auto g = square_mask(24, 24, 5, 6, 5);
        auto mt = square_mask(24, 24, 4 + 3, 4 + 2, 5);
        auto gt = square_mask(24, 24, 5 + 3, 6 + 2, 5);
        REQUIRE(iou(m, g) == iou(mt, gt));
        REQUIRE(boundary_f(m, g, 2) == boundary_f(mt, gt, 2));
    }
    SECTION("iou below 1 whenever masks differ and one is nonempty") {
        for (int rep = 0; rep < 50; ++rep) {
            auto m = random_mask(rng, 10, 10, 0.3);
            auto g = m;
            const int flip = static_cast<int>(rng.below(100));
            g.v[static_cast<size_t>(flip)] ^= 1;
            REQUIRE(iou(m, g) < 1.0);
        }
    }
}

TEST_CASE("oracle equivalence on random pairs") {
    Rng rng(4242);
    for (int rep = 0; rep < 500; ++rep) {
        double dm = rng.uniform();
        double dg = rng.uniform();
        if (rep % 25 == 0) dm = 0.0;  // exercise the empty conventions
        if (rep % 40 == 0) dg = 0.0;
        auto m = random_mask(rng, 16, 16, dm);
        auto g = random_mask(rng, 16, 16, dg);
        REQUIRE(iou(m, g) == iou_brute(m, g));
        const int tol = default_boundary_tolerance(16, 16);
        REQUIRE(std::abs(boundary_f(m, g) - boundary_f_brute(m, g, tol)) <= 1e-12);
    }
}

TEST_CASE("aggregate") {
    auto row = [](const std::string& cond, uint64_t seed, const std::string& seq,
                  const std::string& frame, double f, double i) {
        EvalRow r;
        r.condition = cond;
        r.variant = "dual_diff";
        r.seed = seed;
        r.fold = 0;
        r.sequence = seq;
        r.frame = frame;
        r.f = f;
        r.iou = i;
        return r;
    };

    SECTION("single row aggregates to itself") {
        auto rep = aggregate({row("c", 0, "s", "00000", 0.5, 0.7)});
        REQUIRE(rep.sequences.size() == 1);
        REQUIRE(rep.seeds.size() == 1);
        REQUIRE(rep.conditions.size() == 1);
        REQUIRE(rep.conditions[0].f == 0.5);
        REQUIRE(rep.conditions[0].iou == 0.7);
    }
    SECTION("sequence means average unweighted") {
        auto rep = aggregate({
            row("c", 0, "a", "0", 0.4, 0.4),
            row("c", 0, "a", "1", 0.4, 0.4),
            row("c", 0, "a", "2", 0.4, 0.4),
            row("c", 0, "b", "0", 0.6, 0.6),
        });
        REQUIRE(rep.conditions.size() == 1);
        REQUIRE(rep.conditions[0].f == Catch::Approx(0.5).margin(1e-12));
        REQUIRE(rep.conditions[0].iou == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("matches an independent flat recomputation on random rows") {
        Rng rng(55);
        std::vector<EvalRow> rows;
        const std::string conds[2] = {"x", "y"};
        for (int i = 0; i < 100; ++i) {
            const auto c = conds[rng.below(2)];
            const uint64_t seed = rng.below(3);
            const auto seq = std::string("s") + std::to_string(rng.below(4));
            rows.push_back(row(c, seed, seq, std::to_string(i), rng.uniform(), rng.uniform()));
        }
        auto rep = aggregate(rows);

        // brute recomputation frame -> sequence -> seed -> condition
        std::map<std::tuple<std::string, uint64_t, std::string>, std::pair<double, int>> seq_acc;
        for (const auto& r : rows) {
            auto& a = seq_acc[{r.condition, *r.seed, r.sequence}];
            a.first += r.iou;
            a.second += 1;
        }
        std::map<std::pair<std::string, uint64_t>, std::pair<double, int>> seed_acc;
        for (const auto& [k, a] : seq_acc) {
            auto& s = seed_acc[{std::get<0>(k), std::get<1>(k)}];
            s.first += a.first / a.second;
            s.second += 1;
        }
        std::map<std::string, std::pair<double, int>> cond_acc;
        for (const auto& [k, a] : seed_acc) {
            auto& c = cond_acc[k.first];
            c.first += a.first / a.second;
            c.second += 1;
        }
        for (const auto& r : rep.conditions) {
            const auto& a = cond_acc.at(r.condition);
            REQUIRE(r.iou == Catch::Approx(a.first / a.second).margin(1e-12));
        }
    }
    SECTION("empty input is rejected") {
        REQUIRE_THROWS_AS(aggregate({}), ConfigError);
    }
    SECTION("csv layout") {
        auto rep = aggregate({row("c", 3, "seq", "00001", 0.25, 0.75)});
        const std::string csv = eval_csv_string(rep);
        REQUIRE(csv.find("condition,variant,seed,fold,sequence,frame,F,IoU\n") == 0);
        REQUIRE(csv.find("c,dual_diff,3,0,seq,00001,0.250000,0.750000\n") != std::string::npos);
        REQUIRE(csv.find("c,dual_diff,3,0,seq,mean,0.250000,0.750000\n") != std::string::npos);
        REQUIRE(csv.find("c,dual_diff,all,all,mean,mean,0.250000,0.750000\n") != std::string::npos);
    }
}

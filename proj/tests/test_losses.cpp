#include <cmath>
#include <set>

#include "doctest.h"
#include "ref64.hpp"

using namespace sf3d;

namespace {

// Logits [1, K, 2, 2, 2] with `margin` on the listed class per voxel, 0 elsewhere.
Tensor peaked(const std::vector<int32_t>& labels, int k, float margin) {
    Tensor t = Tensor::zeros({1, k, 2, 2, 2});
    for (size_t v = 0; v < labels.size(); ++v) t.data()[static_cast<size_t>(labels[v]) * 8 + v] = margin;
    return t;
}

IntTensor mask(std::vector<int32_t> labels) {
    IntTensor m({1, 2, 2, 2});
    m.data = std::move(labels);
    return m;
}

template <typename Fn>
ErrorCode error_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode{};
}

}  // namespace

TEST_SUITE("dice loss") {
    TEST_CASE("perfect prediction") {
        const std::vector<int32_t> labels{0, 1, 2, 3, 0, 1, 2, 3};
        CHECK(dice_loss(peaked(labels, 4, 50.0f), mask(labels)).item() <= 0.01f);
    }

    TEST_CASE("disjoint foregrounds") {
        // Prediction puts class 1 exactly where the target has background and vice versa.
        const float loss = dice_loss(peaked({1, 1, 1, 1, 0, 0, 0, 0}, 2, 100.0f), mask({0, 0, 0, 0, 1, 1, 1, 1})).item();
        CHECK(loss == doctest::Approx(1.0).epsilon(1e-5));
    }

    TEST_CASE("half overlap gives dice one half") {
        const float loss = dice_loss(peaked({1, 1, 1, 1, 0, 0, 0, 0}, 2, 100.0f), mask({1, 1, 0, 0, 1, 1, 0, 0})).item();
        CHECK(1.0f - loss == doctest::Approx(0.5).epsilon(1e-5));
    }

    TEST_CASE("background inclusion") {
        std::mt19937_64 rng(1);
        Tensor logits = Tensor::randn({2, 3, 2, 2, 2}, rng);
        IntTensor t({2, 2, 2, 2});
        for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<int32_t>(i % 3);
        for (bool bg : {false, true}) {
            SoftDiceConfig cfg{1e-5f, bg};
            CHECK(dice_loss(logits, t, cfg).item() == doctest::Approx(ref64::dice_loss(ref64::d(logits), t, 1e-5, bg)).epsilon(1e-6));
        }
    }

    TEST_CASE("range") {
        std::mt19937_64 rng(2);
        for (int trial = 0; trial < 10; ++trial) {
            Tensor logits = Tensor::randn({1, 4, 2, 2, 2}, rng, 4.0f);
            IntTensor t = mask({0, 1, 2, 3, 3, 2, 1, 0});
            const float d = dice_loss(logits, t).item();
            CHECK(d >= 0.0f);
            CHECK(d <= 1.0f);
        }
    }

    TEST_CASE("label validation") {
        CHECK(error_of([] { dice_loss(Tensor::zeros({1, 2, 2, 2, 2}), mask({0, 1, 2, 0, 0, 0, 0, 0})); }) ==
              ErrorCode::LabelOutOfRange);
        CHECK(error_of([] { dice_loss(Tensor::zeros({1, 2, 2, 2, 2}), mask({0, -1, 0, 0, 0, 0, 0, 0})); }) ==
              ErrorCode::LabelOutOfRange);
        CHECK(error_of([] { dice_loss(Tensor::zeros({1, 2, 2, 2, 1}), mask({0, 0, 0, 0, 0, 0, 0, 0})); }) ==
              ErrorCode::ShapeMismatch);
        CHECK(error_of([] { dice_loss(Tensor::zeros({1, 2, 2, 2, 2}), mask({0, 0, 0, 0, 0, 0, 0, 0}), {0.0f, false}); }) ==
              ErrorCode::InvalidConfig);
    }
}

TEST_SUITE("cross entropy") {
    TEST_CASE("uniform logits give ln K") {
        CHECK(cross_entropy(Tensor::zeros({1, 4, 2, 2, 2}), mask({0, 1, 2, 3, 0, 1, 2, 3})).item() ==
              doctest::Approx(std::log(4.0)).epsilon(1e-6));
    }

    TEST_CASE("hard correct logits give zero") {
        const std::vector<int32_t> labels{0, 1, 1, 0, 1, 0, 0, 1};
        CHECK(cross_entropy(peaked(labels, 2, 100.0f), mask(labels)).item() <= 1e-6f);
    }

    TEST_CASE("random two-class case against the per-voxel oracle") {
        std::mt19937_64 rng(3);
        Tensor logits = Tensor::randn({1, 2, 2, 2, 2}, rng, 2.0f);
        IntTensor t = mask({0, 1, 1, 0, 1, 1, 0, 0});
        CHECK(std::fabs(cross_entropy(logits, t).item() - ref64::cross_entropy(ref64::d(logits), t)) <= 1e-6);
    }

    TEST_CASE("large margins stay finite") {
        const float ce = cross_entropy(peaked({1, 1, 1, 1, 1, 1, 1, 1}, 2, 1000.0f), mask({0, 0, 0, 0, 0, 0, 0, 0})).item();
        CHECK(ce == doctest::Approx(1000.0));
    }
}

TEST_SUITE("dice ce") {
    TEST_CASE("equal weighting of the components") {
        std::mt19937_64 rng(4);
        Tensor logits = Tensor::randn({1, 3, 2, 2, 2}, rng);
        IntTensor t = mask({0, 1, 2, 0, 1, 2, 0, 1});
        const float d = dice_loss(logits, t).item(), c = cross_entropy(logits, t).item();
        CHECK(dice_ce_loss(logits, t).item() == doctest::Approx((d + c) / 2.0f).epsilon(1e-7));
    }

    TEST_CASE("perfect prediction is near zero") {
        const std::vector<int32_t> labels{0, 1, 2, 0, 1, 2, 0, 1};
        CHECK(dice_ce_loss(peaked(labels, 3, 50.0f), mask(labels)).item() <= 0.01f);
    }

    TEST_CASE("gradients against finite differences") {
        std::mt19937_64 rng(5);
        Tensor logits = Tensor::randn({2, 3, 2, 2, 2}, rng);
        IntTensor t({2, 2, 2, 2});
        for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<int32_t>((i * 7) % 3);
        auto scalar = [](double v) {
            ref64::T64 out({1});
            out[0] = v;
            return out;
        };
        for (bool bg : {false, true}) {
            SoftDiceConfig cfg{1e-5f, bg};
            auto r = ref64::check_gradients({logits}, [&] { return dice_ce_loss(logits, t, cfg); }, [&] {
                const ref64::T64 x = ref64::d(logits);
                return scalar(0.5 * ref64::dice_loss(x, t, 1e-5, bg) + 0.5 * ref64::cross_entropy(x, t));
            });
            CHECK(r.max_rel <= 1e-4);
        }
        auto r = ref64::check_gradients({logits}, [&] { return dice_loss(logits, t); },
                                        [&] { return scalar(ref64::dice_loss(ref64::d(logits), t, 1e-5, false)); });
        CHECK(r.max_rel <= 1e-4);
        r = ref64::check_gradients({logits}, [&] { return cross_entropy(logits, t); },
                                   [&] { return scalar(ref64::cross_entropy(ref64::d(logits), t)); });
        CHECK(r.max_rel <= 1e-4);
    }
}

TEST_SUITE("dice score") {
    TEST_CASE("identical masks score one everywhere") {
        IntTensor m = mask({0, 1, 2, 3, 3, 2, 1, 0});
        DiceScore s = dice_score(m, m, 4);
        for (double v : s.per_class) CHECK(v == 1.0);
        CHECK(s.mean_foreground == 1.0);
    }

    TEST_CASE("half overlap") {
        DiceScore s = dice_score(mask({1, 1, 1, 1, 0, 0, 0, 0}), mask({1, 1, 0, 0, 1, 1, 0, 0}), 2);
        CHECK(s.per_class[1] == 0.5);
        CHECK(s.mean_foreground == 0.5);
    }

    TEST_CASE("absent class scores one and background is excluded from the mean") {
        DiceScore s = dice_score(mask({0, 0, 1, 1, 0, 0, 0, 0}), mask({0, 0, 1, 0, 0, 0, 0, 0}), 3);
        CHECK(s.per_class[2] == 1.0);
        CHECK(s.per_class[1] == doctest::Approx(2.0 / 3.0));
        CHECK(s.mean_foreground == doctest::Approx((2.0 / 3.0 + 1.0) / 2.0));
    }

    TEST_CASE("random masks against set counting, symmetric") {
        std::mt19937_64 rng(6);
        std::uniform_int_distribution<int32_t> label(0, 3);
        for (int trial = 0; trial < 20; ++trial) {
            IntTensor a({1, 4, 4, 4}), b({1, 4, 4, 4});
            for (auto& v : a.data) v = label(rng);
            for (auto& v : b.data) v = label(rng);
            DiceScore ab = dice_score(a, b, 4), ba = dice_score(b, a, 4);
            for (int c = 0; c < 4; ++c) {
                std::set<size_t> sa, sb, both;
                for (size_t i = 0; i < a.data.size(); ++i) {
                    if (a.data[i] == c) sa.insert(i);
                    if (b.data[i] == c) sb.insert(i);
                    if (a.data[i] == c && b.data[i] == c) both.insert(i);
                }
                const double expect = sa.empty() && sb.empty() ? 1.0 : 2.0 * both.size() / double(sa.size() + sb.size());
                CHECK(ab.per_class[size_t(c)] == doctest::Approx(expect).epsilon(1e-12));
                CHECK(ab.per_class[size_t(c)] == ba.per_class[size_t(c)]);
            }
        }
    }

    TEST_CASE("soft dice approaches hard dice as the margin grows") {
        std::mt19937_64 rng(7);
        std::uniform_int_distribution<int32_t> label(0, 2);
        IntTensor pred({1, 2, 2, 2}), target({1, 2, 2, 2});
        for (auto& v : pred.data) v = label(rng);
        for (auto& v : target.data) v = label(rng);
        const std::vector<double> soft = ref64::soft_dice_per_class(ref64::d(peaked(pred.data, 3, 50.0f)), target, 1e-5);
        DiceScore hard = dice_score(pred, target, 3);
        for (size_t c = 0; c < 3; ++c) CHECK(std::fabs(soft[c] - hard.per_class[c]) <= 1e-3);
        const float loss = dice_loss(peaked(pred.data, 3, 50.0f), target).item();
        CHECK(std::fabs((1.0 - loss) - hard.mean_foreground) <= 1e-3);
    }

    TEST_CASE("validation") {
        CHECK(error_of([] { dice_score(mask({0, 0, 0, 0, 0, 0, 0, 5}), mask({0, 0, 0, 0, 0, 0, 0, 0}), 3); }) ==
              ErrorCode::LabelOutOfRange);
        IntTensor small({1, 2});
        CHECK(error_of([&] { dice_score(small, mask({0, 0, 0, 0, 0, 0, 0, 0}), 3); }) == ErrorCode::ShapeMismatch);
    }

    TEST_CASE("argmax labels") {
        IntTensor labels = argmax_labels(peaked({2, 0, 1, 1, 0, 2, 2, 1}, 3, 5.0f));
        CHECK(labels.data == std::vector<int32_t>{2, 0, 1, 1, 0, 2, 2, 1});
    }
}

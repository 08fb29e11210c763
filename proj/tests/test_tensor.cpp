#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ref64.hpp"
#include "sf3d/serialize.hpp"

using namespace sf3d;
using ref64::T64;

namespace {

double max_abs_diff(const Tensor& a, const T64& b) {
    REQUIRE(a.shape() == b.shape);
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data()[static_cast<size_t>(i)] - b[i]));
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

Tensor identity(int64_t n) {
    Tensor t = Tensor::zeros({n, n});
    for (int64_t i = 0; i < n; ++i) t.data()[static_cast<size_t>(i * n + i)] = 1.0f;
    return t;
}

}  // namespace

TEST_SUITE("matmul") {
    TEST_CASE("identity on the left leaves the operand unchanged bitwise") {
        std::mt19937_64 rng(1);
        Tensor b = Tensor::randn({3, 2}, rng);
        Tensor c = matmul(identity(3), b);
        CHECK(std::equal(c.data().begin(), c.data().end(), b.data().begin()));
    }

    TEST_CASE("2x2 times identity") {
        Tensor a({2, 2}, {1, 2, 3, 4});
        Tensor c = matmul(a, identity(2));
        CHECK(std::vector<float>(c.data().begin(), c.data().end()) == std::vector<float>{1, 2, 3, 4});
    }

    TEST_CASE("random 5x7 by 7x4 against the triple loop") {
        std::mt19937_64 rng(2);
        Tensor a = Tensor::randn({5, 7}, rng), b = Tensor::randn({7, 4}, rng);
        CHECK(max_abs_diff(matmul(a, b), ref64::matmul(ref64::d(a), ref64::d(b))) <= 1e-5);
    }

    TEST_CASE("batched and shared-rhs forms") {
        std::mt19937_64 rng(3);
        Tensor a = Tensor::randn({2, 3, 4, 5}, rng), b = Tensor::randn({2, 3, 5, 6}, rng), w = Tensor::randn({5, 6}, rng);
        CHECK(max_abs_diff(matmul(a, b), ref64::matmul(ref64::d(a), ref64::d(b))) <= 1e-5);
        CHECK(max_abs_diff(matmul(a, w), ref64::matmul(ref64::d(a), ref64::d(w))) <= 1e-5);
    }

    TEST_CASE("inner dimension mismatch") {
        CHECK(error_of([] { matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})); }) == ErrorCode::ShapeMismatch);
    }
}

TEST_SUITE("conv3d") {
    TEST_CASE("unit 1x1x1 kernel is the identity") {
        std::mt19937_64 rng(4);
        Tensor x = Tensor::randn({1, 1, 3, 4, 5}, rng);
        Tensor y = conv3d(x, Tensor::ones({1, 1, 1, 1, 1}), Tensor(), {});
        CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
    }

    TEST_CASE("kernel 7 stride 4 pad 3 maps 128 to 32") {
        CHECK(conv_output_extent(128, 7, 4, 3) == 32);
    }

    TEST_CASE("random 1x2x5x5x5 input with 3x2x3x3x3 kernel against nested loops") {
        std::mt19937_64 rng(5);
        Tensor x = Tensor::randn({1, 2, 5, 5, 5}, rng), w = Tensor::randn({3, 2, 3, 3, 3}, rng), b = Tensor::randn({3}, rng);
        CHECK(max_abs_diff(conv3d(x, w, b, {}), ref64::conv3d(ref64::d(x), ref64::d(w), ref64::d(b), 1, 0, 1)) <= 1e-5);
    }

    TEST_CASE("strided, padded, grouped and depthwise variants") {
        std::mt19937_64 rng(6);
        Tensor x = Tensor::randn({2, 4, 6, 6, 6}, rng);
        for (int groups : {1, 2, 4}) {
            Tensor w = Tensor::randn({4, 4 / groups, 3, 3, 3}, rng), b = Tensor::randn({4}, rng);
            for (int stride : {1, 2}) {
                Conv3dParams p{{stride, stride, stride}, {1, 1, 1}, groups};
                CHECK(max_abs_diff(conv3d(x, w, b, p), ref64::conv3d(ref64::d(x), ref64::d(w), ref64::d(b), stride, 1, groups)) <=
                      1e-5);
            }
        }
    }

    TEST_CASE("output extent obeys the floor formula over a grid of geometries") {
        std::mt19937_64 rng(7);
        for (int k = 1; k <= 4; ++k)
            for (int s = 1; s <= 3; ++s)
                for (int p = 0; p <= 2; ++p)
                    for (int64_t n = 4; n <= 7; ++n) {
                        if (n + 2 * p < k) continue;
                        Tensor y = conv3d(Tensor::randn({1, 1, n, n, n}, rng), Tensor::ones({1, 1, k, k, k}), Tensor(),
                                          {{s, s, s}, {p, p, p}, 1});
                        const int64_t expect = (n + 2 * p - k) / s + 1;
                        CHECK(y.shape() == Shape{1, 1, expect, expect, expect});
                    }
    }

    TEST_CASE("errors") {
        CHECK(error_of([] { conv3d(Tensor::zeros({1, 3, 4, 4, 4}), Tensor::zeros({2, 1, 1, 1, 1}), Tensor(), {{1, 1, 1}, {0, 0, 0}, 2}); }) ==
              ErrorCode::InvalidGroups);
        CHECK(error_of([] { conv3d(Tensor::zeros({1, 2, 4, 4, 4}), Tensor::zeros({2, 3, 1, 1, 1}), Tensor(), {}); }) ==
              ErrorCode::ShapeMismatch);
        CHECK(error_of([] { conv3d(Tensor::zeros({1, 1, 2, 2, 2}), Tensor::zeros({1, 1, 3, 3, 3}), Tensor(), {}); }) ==
              ErrorCode::ShapeMismatch);
    }
}

TEST_SUITE("layernorm") {
    TEST_CASE("constant slice normalises to zero") {
        Tensor y = layernorm(Tensor::full({1, 4}, 5.0f), Tensor::ones({4}), Tensor::zeros({4}));
        for (float v : y.data()) CHECK(v == 0.0f);
    }

    TEST_CASE("pre-affine output has zero mean and unit variance") {
        std::mt19937_64 rng(8);
        Tensor y = layernorm(Tensor::randn({6, 16}, rng, 3.0f), Tensor::ones({16}), Tensor::zeros({16}), 0.0f);
        for (int r = 0; r < 6; ++r) {
            double mu = 0, var = 0;
            for (int c = 0; c < 16; ++c) mu += y.data()[static_cast<size_t>(r * 16 + c)];
            mu /= 16;
            for (int c = 0; c < 16; ++c) var += std::pow(y.data()[static_cast<size_t>(r * 16 + c)] - mu, 2);
            CHECK(std::fabs(mu) <= 1e-6);
            CHECK(var / 16 == doctest::Approx(1.0).epsilon(1e-5));
        }
    }

    TEST_CASE("random 4x8 against the direct formula") {
        std::mt19937_64 rng(9);
        Tensor x = Tensor::randn({4, 8}, rng), g = Tensor::randn({8}, rng), b = Tensor::randn({8}, rng);
        CHECK(max_abs_diff(layernorm(x, g, b), ref64::layernorm(ref64::d(x), ref64::d(g), ref64::d(b), 1e-5)) <= 1e-5);
    }

    TEST_CASE("affine shape mismatch") {
        CHECK(error_of([] { layernorm(Tensor::zeros({2, 4}), Tensor::ones({3}), Tensor::zeros({4})); }) == ErrorCode::ShapeMismatch);
    }
}

TEST_SUITE("softmax") {
    TEST_CASE("uniform logits") {
        Tensor y = softmax(Tensor::zeros({4}), 0);
        for (float v : y.data()) CHECK(v == 0.25f);
    }

    TEST_CASE("large logits do not overflow") {
        Tensor y = softmax(Tensor({2}, {1000.0f, 0.0f}), 0);
        CHECK(y.data()[0] == doctest::Approx(1.0));
        CHECK(y.data()[1] == doctest::Approx(0.0));
        CHECK(std::isfinite(y.data()[0]));
    }

    TEST_CASE("random 3x6 against naive exp/sum, both axes") {
        std::mt19937_64 rng(10);
        Tensor x = Tensor::randn({3, 6}, rng);
        for (int axis : {0, 1, -1}) CHECK(max_abs_diff(softmax(x, axis), ref64::softmax(ref64::d(x), axis)) <= 1e-6);
    }

    TEST_CASE("rows are simplex points") {
        std::mt19937_64 rng(11);
        Tensor y = softmax(Tensor::randn({7, 13}, rng, 5.0f), 1);
        for (int r = 0; r < 7; ++r) {
            double s = 0;
            for (int c = 0; c < 13; ++c) {
                const float v = y.data()[static_cast<size_t>(r * 13 + c)];
                CHECK(v >= 0.0f);
                s += v;
            }
            CHECK(std::fabs(s - 1.0) <= 1e-6);
        }
    }
}

TEST_SUITE("gelu") {
    TEST_CASE("fixed points") {
        Tensor y = gelu(Tensor({4}, {0.0f, 10.0f, 1.0f, -1.0f}));
        CHECK(y.data()[0] == 0.0f);
        CHECK(y.data()[1] == doctest::Approx(10.0));
        CHECK(std::fabs(y.data()[2] - 0.8411919906082768) <= 1e-6);
        CHECK(std::fabs(y.data()[3] + 0.15880800939172324) <= 1e-6);
    }
}

TEST_SUITE("trilinear_upsample") {
    TEST_CASE("constant volume stays constant") {
        for (int s : {1, 2, 3, 4}) {
            Tensor y = trilinear_upsample(Tensor::full({1, 2, 2, 3, 2}, 1.5f), s);
            CHECK(y.shape() == Shape{1, 2, 2 * s, 3 * s, 2 * s});
            for (float v : y.data()) CHECK(v == doctest::Approx(1.5).epsilon(1e-7));
        }
    }

    TEST_CASE("scale 1 is the identity") {
        std::mt19937_64 rng(12);
        Tensor x = Tensor::randn({1, 2, 3, 3, 3}, rng);
        Tensor y = trilinear_upsample(x, 1);
        CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
    }

    TEST_CASE("2x2x2 ramp at scale 2") {
        Tensor x({1, 1, 2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
        const std::vector<double> expect{
            0.0,  0.25, 0.75, 1.0,  0.5,  0.75, 1.25, 1.5,  1.5,  1.75, 2.25, 2.5,  2.0,  2.25, 2.75, 3.0,
            1.0,  1.25, 1.75, 2.0,  1.5,  1.75, 2.25, 2.5,  2.5,  2.75, 3.25, 3.5,  3.0,  3.25, 3.75, 4.0,
            3.0,  3.25, 3.75, 4.0,  3.5,  3.75, 4.25, 4.5,  4.5,  4.75, 5.25, 5.5,  5.0,  5.25, 5.75, 6.0,
            4.0,  4.25, 4.75, 5.0,  4.5,  4.75, 5.25, 5.5,  5.5,  5.75, 6.25, 6.5,  6.0,  6.25, 6.75, 7.0};
        Tensor y = trilinear_upsample(x, 2);
        for (size_t i = 0; i < expect.size(); ++i) CHECK(std::fabs(y.data()[i] - expect[i]) <= 1e-6);
        CHECK(max_abs_diff(y, ref64::upsample(ref64::d(x), 2)) <= 1e-6);
    }

    TEST_CASE("random non-cubic volume at scale 3") {
        std::mt19937_64 rng(13);
        Tensor x = Tensor::randn({2, 2, 2, 3, 4}, rng);
        CHECK(max_abs_diff(trilinear_upsample(x, 3), ref64::upsample(ref64::d(x), 3)) <= 1e-6);
    }

    TEST_CASE("scale must be positive") {
        CHECK(error_of([] { trilinear_upsample(Tensor::zeros({1, 1, 2, 2, 2}), 0); }) == ErrorCode::InvalidArgument);
    }
}

TEST_SUITE("backward") {
    TEST_CASE("sum gives all-ones") {
        std::mt19937_64 rng(14);
        Tensor x = Tensor::randn({2, 3, 4}, rng);
        x.set_requires_grad(true);
        backward(sum(x));
        for (float g : x.grad()) CHECK(g == 1.0f);
    }

    TEST_CASE("half sum of squares gives x") {
        std::mt19937_64 rng(15);
        Tensor x = Tensor::randn({5, 3}, rng);
        x.set_requires_grad(true);
        backward(scale(sum(mul(x, x)), 0.5f));
        for (int64_t i = 0; i < x.numel(); ++i)
            CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(x.data()[static_cast<size_t>(i)]));
    }

    TEST_CASE("gradients accumulate across passes") {
        Tensor x = Tensor::ones({3});
        x.set_requires_grad(true);
        backward(sum(x));
        backward(sum(x));
        for (float g : x.grad()) CHECK(g == 2.0f);
    }

    TEST_CASE("shared subexpression is visited once") {
        Tensor x({1}, {3.0f});
        x.set_requires_grad(true);
        Tensor y = mul(x, x);
        backward(sum(add(y, y)));  // d/dx 2x^2 = 4x
        CHECK(x.grad()[0] == doctest::Approx(12.0));
    }

    TEST_CASE("non-scalar loss") {
        Tensor x = Tensor::ones({3});
        x.set_requires_grad(true);
        CHECK(error_of([&] { backward(scale(x, 2.0f)); }) == ErrorCode::NotScalar);
    }

    TEST_CASE("second sweep over a consumed tape") {
        Tensor x = Tensor::ones({3});
        x.set_requires_grad(true);
        Tensor loss = sum(scale(x, 2.0f));
        backward(loss);
        CHECK(error_of([&] { backward(loss); }) == ErrorCode::DisconnectedTape);
    }

    TEST_CASE("loss without any tape") {
        CHECK(error_of([] { backward(Tensor::ones({1})); }) == ErrorCode::DisconnectedTape);
    }

    TEST_CASE("no-grad guard records nothing") {
        Tensor x = Tensor::ones({3});
        x.set_requires_grad(true);
        NoGradGuard guard;
        CHECK_FALSE(sum(x).has_tape());
    }
}

TEST_SUITE("finite differences") {
    using ref64::check_gradients;
    constexpr double kTol = 1e-4;

    TEST_CASE("matmul") {
        std::mt19937_64 rng(20);
        Tensor a = Tensor::randn({2, 3, 4}, rng), b = Tensor::randn({2, 4, 5}, rng), w = Tensor::randn({4, 5}, rng);
        auto r = check_gradients({a, b}, [&] { return matmul(a, b); },
                                 [&] { return ref64::matmul(ref64::d(a), ref64::d(b)); });
        CHECK(r.max_rel <= kTol);
        r = check_gradients({a, w}, [&] { return matmul(a, w); }, [&] { return ref64::matmul(ref64::d(a), ref64::d(w)); });
        CHECK(r.max_rel <= kTol);
    }

    TEST_CASE("linear") {
        std::mt19937_64 rng(21);
        Tensor x = Tensor::randn({2, 3, 5}, rng), w = Tensor::randn({4, 5}, rng), b = Tensor::randn({4}, rng);
        auto r = check_gradients({x, w, b}, [&] { return linear(x, w, b); },
                                 [&] { return ref64::linear(ref64::d(x), ref64::d(w), ref64::d(b)); });
        CHECK(r.max_rel <= kTol);
    }

    TEST_CASE("conv3d dense, strided, depthwise") {
        std::mt19937_64 rng(22);
        Tensor x = Tensor::randn({2, 4, 5, 4, 5}, rng);
        for (int groups : {1, 2, 4})
            for (int stride : {1, 2}) {
                Tensor w = Tensor::randn({4, 4 / groups, 3, 3, 3}, rng), b = Tensor::randn({4}, rng);
                Conv3dParams p{{stride, stride, stride}, {1, 1, 1}, groups};
                auto r = check_gradients({x, w, b}, [&] { return conv3d(x, w, b, p); },
                                         [&] { return ref64::conv3d(ref64::d(x), ref64::d(w), ref64::d(b), stride, 1, groups); });
                CHECK_MESSAGE(r.max_rel <= kTol, "groups ", groups, " stride ", stride, " rel ", r.max_rel);
            }
    }

    TEST_CASE("conv3d pointwise") {
        std::mt19937_64 rng(23);
        Tensor x = Tensor::randn({1, 3, 2, 3, 2}, rng), w = Tensor::randn({5, 3, 1, 1, 1}, rng), b = Tensor::randn({5}, rng);
        auto r = check_gradients({x, w, b}, [&] { return conv3d(x, w, b, {}); },
                                 [&] { return ref64::conv3d(ref64::d(x), ref64::d(w), ref64::d(b), 1, 0, 1); });
        CHECK(r.max_rel <= kTol);
    }

    TEST_CASE("layernorm") {
        std::mt19937_64 rng(24);
        Tensor x = Tensor::randn({3, 2, 8}, rng), g = Tensor::randn({8}, rng), b = Tensor::randn({8}, rng);
        auto r = check_gradients({x, g, b}, [&] { return layernorm(x, g, b); },
                                 [&] { return ref64::layernorm(ref64::d(x), ref64::d(g), ref64::d(b), 1e-5); });
        CHECK(r.max_rel <= kTol);
    }

    TEST_CASE("softmax over each axis") {
        std::mt19937_64 rng(25);
        Tensor x = Tensor::randn({3, 4, 5}, rng);
        for (int axis : {0, 1, 2}) {
            auto r = check_gradients({x}, [&] { return softmax(x, axis); }, [&] { return ref64::softmax(ref64::d(x), axis); });
            CHECK(r.max_rel <= kTol);
        }
    }

    TEST_CASE("gelu") {
        std::mt19937_64 rng(26);
        Tensor x = Tensor::randn({40}, rng, 2.0f);
        auto r = check_gradients({x}, [&] { return gelu(x); }, [&] { return ref64::gelu(ref64::d(x)); });
        CHECK(r.max_rel <= kTol);
    }

    TEST_CASE("trilinear upsample") {
        std::mt19937_64 rng(27);
        Tensor x = Tensor::randn({1, 2, 2, 3, 2}, rng);
        for (int s : {2, 4}) {
            auto r = check_gradients({x}, [&] { return trilinear_upsample(x, s); },
                                     [&] { return ref64::upsample(ref64::d(x), s); });
            CHECK(r.max_rel <= kTol);
        }
    }

    TEST_CASE("elementwise, reductions and reshapes") {
        std::mt19937_64 rng(28);
        Tensor a = Tensor::randn({2, 3, 4}, rng), b = Tensor::randn({2, 3, 4}, rng);
        auto elementwise = [](const T64& x, const T64& y, double sa, double sb, bool product) {
            T64 out = x;
            for (int64_t i = 0; i < x.numel(); ++i) out[i] = product ? x[i] * y[i] : sa * x[i] + sb * y[i];
            return out;
        };
        CHECK(check_gradients({a, b}, [&] { return add(a, b); },
                              [&] { return elementwise(ref64::d(a), ref64::d(b), 1, 1, false); })
                  .max_rel <= kTol);
        CHECK(check_gradients({a, b}, [&] { return sub(a, b); },
                              [&] { return elementwise(ref64::d(a), ref64::d(b), 1, -1, false); })
                  .max_rel <= kTol);
        CHECK(check_gradients({a, b}, [&] { return mul(a, b); },
                              [&] { return elementwise(ref64::d(a), ref64::d(b), 0, 0, true); })
                  .max_rel <= kTol);
        CHECK(check_gradients({a}, [&] { return scale(a, -2.5f); },
                              [&] { return elementwise(ref64::d(a), ref64::d(a), -2.5, 0, false); })
                  .max_rel <= kTol);
        CHECK(check_gradients({a}, [&] { return mean(a); },
                              [&] {
                                  T64 x = ref64::d(a), out({1});
                                  for (double v : x.v) out[0] += v / static_cast<double>(x.numel());
                                  return out;
                              })
                  .max_rel <= kTol);
        CHECK(check_gradients({a}, [&] { return permute(a, {2, 0, 1}); },
                              [&] {
                                  T64 x = ref64::d(a), out({4, 2, 3});
                                  for (int i = 0; i < 2; ++i)
                                      for (int j = 0; j < 3; ++j)
                                          for (int k = 0; k < 4; ++k) out[(k * 2 + i) * 3 + j] = x[(i * 3 + j) * 4 + k];
                                  return out;
                              })
                  .max_rel <= kTol);
        CHECK(check_gradients({a}, [&] { return reshape(a, {6, 4}); },
                              [&] { return ref64::reshaped(ref64::d(a), {6, 4}); })
                  .max_rel <= kTol);
        Tensor c = Tensor::randn({2, 2, 4}, rng);
        CHECK(check_gradients({a, c}, [&] { return concat({a, c}, 1); },
                              [&] {
                                  T64 x = ref64::d(a), y = ref64::d(c), out({2, 5, 4});
                                  for (int i = 0; i < 2; ++i)
                                      for (int j = 0; j < 5; ++j)
                                          for (int k = 0; k < 4; ++k)
                                              out[(i * 5 + j) * 4 + k] = j < 3 ? x[(i * 3 + j) * 4 + k] : y[(i * 2 + j - 3) * 4 + k];
                                  return out;
                              })
                  .max_rel <= kTol);
    }
}

TEST_SUITE("tensor core") {
    TEST_CASE("forward is bitwise deterministic") {
        std::mt19937_64 rng(30);
        Tensor x = Tensor::randn({2, 4, 6, 6, 6}, rng), w = Tensor::randn({8, 4, 3, 3, 3}, rng);
        Tensor y1 = softmax(conv3d(x, w, Tensor(), {{2, 2, 2}, {1, 1, 1}, 1}), 1);
        Tensor y2 = softmax(conv3d(x, w, Tensor(), {{2, 2, 2}, {1, 1, 1}, 1}), 1);
        CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
    }

    TEST_CASE("non-positive extents are rejected") {
        CHECK(error_of([] { Tensor t({2, 0}); }) == ErrorCode::ShapeMismatch);
        CHECK(error_of([] { Tensor t({2, 2}, std::vector<float>(3)); }) == ErrorCode::ShapeMismatch);
    }

    TEST_CASE("flop counter sees matmul work") {
        FlopCounter counter;
        matmul(Tensor::zeros({3, 4}), Tensor::zeros({4, 5}));
        CHECK(counter.total() == 2u * 3 * 4 * 5);
    }
}

TEST_SUITE("serialization") {
    TEST_CASE("round trip and validation") {
        const auto dir = std::filesystem::temp_directory_path() / "sf3d_serialize_test";
        std::filesystem::remove_all(dir);
        std::mt19937_64 rng(31);
        Tensor t = Tensor::randn({3, 2, 5}, rng);
        save_tensor(t, dir, "weights.a");
        Tensor back = load_tensor(dir, "weights.a");
        CHECK(back.shape() == t.shape());
        CHECK(std::equal(back.data().begin(), back.data().end(), t.data().begin()));

        std::filesystem::resize_file(dir / "weights.a.bin", 8);
        CHECK(error_of([&] { load_tensor(dir, "weights.a"); }) == ErrorCode::FormatError);
        std::ofstream(dir / "weights.a.json") << R"({"shape":[2],"dtype":"float16","name":"weights.a"})";
        CHECK(error_of([&] { load_tensor(dir, "weights.a"); }) == ErrorCode::FormatError);
        CHECK(error_of([&] { load_tensor(dir, "missing"); }) == ErrorCode::IoError);
        std::filesystem::remove_all(dir);
    }
}

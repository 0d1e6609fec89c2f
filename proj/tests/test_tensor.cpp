#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "doei/rng.hpp"
#include "doei/tensor.hpp"
#include "fd_check.hpp"

using namespace doei;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

// Naive triple-loop product, the reference for matmul.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
            out.at(i, j) = acc;
        }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
    return worst;
}

}  // namespace

TEST_CASE("matmul identity and hand products") {
    Tensor eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    Rng rng(7);
    Tensor x = random_tensor({3, 4}, rng);
    CHECK(max_abs_diff(matmul(eye, x), x) == 0.0);

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {0, 1});
    Tensor c = matmul(a, b);
    CHECK(c(0, 0) == 2.0);
    CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(11);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-12);
}

TEST_CASE("matmul rejects mismatched inner dimensions, naming both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on random conformant triples") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 5}, rng);
        Tensor c = random_tensor({5, 2}, rng);
        CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-9);
    }
}

TEST_CASE("softmax_rows uniform and shift invariance") {
    Tensor z({1, 4});
    Tensor s = softmax_rows(z);
    for (std::size_t j = 0; j < 4; ++j) CHECK(s(0, j) == doctest::Approx(0.25).epsilon(1e-12));

    Rng rng(3);
    Tensor row = random_tensor({1, 6}, rng, -3.0, 3.0);
    Tensor shifted({1, 6});
    for (std::size_t j = 0; j < 6; ++j) shifted.at(0, j) = row(0, j) + 17.5;
    CHECK(max_abs_diff(softmax_rows(row), softmax_rows(shifted)) < 1e-12);
}

TEST_CASE("softmax_rows high-precision values") {
    Tensor row({1, 3}, {1, 2, 3});
    Tensor s = softmax_rows(row);
    CHECK(s(0, 0) == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(s(0, 1) == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(s(0, 2) == doctest::Approx(0.66524096).epsilon(1e-7));
}

TEST_CASE("softmax_rows rows sum to one on 1000 random matrices") {
    Rng rng(51);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 1 + rng.below(6);
        const std::size_t n = 1 + rng.below(12);
        Tensor a = random_tensor({m, n}, rng, -30.0, 30.0);
        Tensor s = softmax_rows(a);
        for (std::size_t i = 0; i < m; ++i) {
            double sum = 0.0;
            bool nonneg = true;
            for (std::size_t j = 0; j < n; ++j) {
                sum += s(i, j);
                nonneg = nonneg && s(i, j) >= 0.0;
            }
            CHECK(nonneg);
            CHECK(std::fabs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("layer_norm edge behaviour") {
    Tensor ones_gain({2}, {1, 1});
    Tensor zero_bias({2});

    Tensor constant({1, 2}, {5, 5});
    Tensor out = layer_norm(constant, ones_gain, zero_bias);
    CHECK(std::fabs(out(0, 0)) < 1e-9);
    CHECK(std::fabs(out(0, 1)) < 1e-9);

    Tensor pm({1, 2}, {1, -1});
    Tensor norm = layer_norm(pm, ones_gain, zero_bias, 1e-12);
    CHECK(norm(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(norm(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));

    Tensor zero_gain({2});
    Tensor bias({2}, {3.5, -2.0});
    Tensor biased = layer_norm(pm, zero_gain, bias);
    CHECK(biased(0, 0) == 3.5);
    CHECK(biased(0, 1) == -2.0);
}

TEST_CASE("elementwise basics") {
    Tensor x({3}, {-1, 0, 2});
    Tensor r = elementwise(x, Elementwise::relu);
    CHECK(r.data() == std::vector<double>{0, 0, 2});

    Rng rng(5);
    Tensor y = random_tensor({2, 3}, rng);
    Tensor zeroed = elementwise(y, 0.0, Elementwise::scale);
    for (double v : zeroed.data()) CHECK(v == 0.0);

    CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);

    Tensor a({2});
    Tensor b({3});
    CHECK_THROWS_AS(elementwise(a, b, Elementwise::add), ShapeError);
}

TEST_CASE("backward on simple graphs") {
    Tensor x({4}, {1, 2, 3, 4});
    x.set_requires_grad(true);

    SUBCASE("sum gives ones") {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = sum_all(x);
        backward(loss, tape);
        CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
    }

    SUBCASE("sum of squares gives 2x") {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = sum_all(mul(x, x));
        backward(loss, tape);
        CHECK(x.grad() == std::vector<double>{2, 4, 6, 8});
    }
}

TEST_CASE("backward rejects bad losses") {
    Tensor x({4}, {1, 2, 3, 4});
    x.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor vec = mul(x, x);
        CHECK_THROWS_AS(backward(vec, tape), ShapeError);
    }
    Tensor stray = Tensor::scalar(1.0);
    CHECK_THROWS_AS(backward(stray, tape), std::invalid_argument);
}

TEST_CASE("gradients match finite differences on a graph of every op kind") {
    Rng rng(23);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    Tensor gain = random_tensor({3}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({3}, rng);
    Tensor head_bias = random_tensor({3}, rng);
    Tensor w = random_tensor({3, 3}, rng);
    std::vector<Tensor> params{a, b, gain, bias, head_bias, w};

    auto loss_fn = [&]() {
        Tensor t1 = matmul(a, b);
        Tensor t2 = add_bias(t1, head_bias);
        Tensor t3 = layer_norm(t2, gain, bias);
        Tensor t4 = softmax_rows(t3);
        Tensor t5 = normalize_rows_sum(add_scalar(t4, 0.5));
        Tensor t6 = row_l2_normalize(t3);
        Tensor t7 = matmul(t5, w);
        Tensor t8 = mul(gelu(t7), add_scalar(relu(t7), 1.0));
        Tensor t9 = add(t8, t6);
        Tensor t10 = sub(t9, scale(t6, 0.25));
        Tensor t11 = transpose(t10);  // 3x4
        Tensor t12 = concat_rows({slice_rows(t11, 0, 2), slice_rows(t11, 1, 3)});
        Tensor t13 = concat_cols({slice_cols(t12, 0, 2), slice_cols(t12, 1, 4)});
        Tensor t14 = softplus(t13);
        Tensor lhs = reshape(mean_axis1(t14), {4, 1});
        Tensor rhs = reshape(mean_axis0(t14), {1, 5});
        return sum_all(matmul(lhs, rhs));
    };

    CHECK(doei::testing::max_grad_error(params, loss_fn) < 1e-4);
}

TEST_CASE("minmax_normalize") {
    Tensor x({3}, {2, 4, 6});
    Tensor n = minmax_normalize(x);
    CHECK(n.data() == std::vector<double>{0.0, 0.5, 1.0});

    Tensor constant = Tensor::full({4}, 3.0);
    Tensor flat = minmax_normalize(constant);
    for (double v : flat.data()) CHECK(v == 0.0);

    // already spans [0,1]: fixed point, and hence idempotent
    Tensor again = minmax_normalize(n);
    CHECK(again.data() == n.data());
}

TEST_CASE("cosine_similarity") {
    std::vector<double> v{0.3, -1.2, 0.7};
    CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_similarity({1, 2}, {2, 1}) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("tensor dump round trip and layout") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    std::stringstream buf;
    write_tensor(buf, t);
    const std::string bytes = buf.str();
    // magic(8) + rank(4) + dims(2*8) + payload(6*8)
    CHECK(bytes.size() == 8 + 4 + 16 + 48);
    CHECK(bytes.substr(0, 8) == "DOEITNSR");

    Tensor back = read_tensor(buf);
    CHECK(back.shape() == t.shape());
    CHECK(back.data() == t.data());

    std::stringstream bad("NOTMAGIC" + bytes.substr(8));
    CHECK_THROWS_AS(read_tensor(bad), IoError);

    std::stringstream truncated(bytes.substr(0, 20));
    CHECK_THROWS_AS(read_tensor(truncated), IoError);
}

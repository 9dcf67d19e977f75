#include <catch2/catch_amalgamated.hpp>

#include "mind/gradcheck.hpp"

using namespace mind;

// Spot checks of individual tape ops against finite differences; the larger
// composites live in the gradcheck registry.

namespace {
template <class F>
double fd_check(ParamSet<double>& ps, F&& scalar, double eps = 1e-5) {
    return gc_detail::check_params(ps, scalar, eps).max_rel_err;
}
}  // namespace

TEST_CASE("elementwise op gradients", "[autodiff]") {
    Rng rng(101);
    ParamSet<double> ps;
    auto a = ps.add("a", gc_detail::rand_tensor({3, 4}, 0.2, 1.5, rng));
    auto b = ps.add("b", gc_detail::rand_tensor({3, 4}, 0.3, 1.7, rng));
    auto r = gc_detail::randn_tensor({3, 4}, 1.0, rng);
    CHECK(fd_check(ps, [&] { return dot_const(add(a, b), r); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(sub(a, b), r); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(mul(a, b), r); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(div_v(a, b), r); }) < 1e-7);
    CHECK(fd_check(ps, [&] { return dot_const(square(a), r); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(sqrt_v(a), r); }) < 1e-7);
    CHECK(fd_check(ps, [&] { return dot_const(sigmoid_v(a), r); }) < 1e-7);
    CHECK(fd_check(ps, [&] { return dot_const(tanh_v(a), r); }) < 1e-7);
    CHECK(fd_check(ps, [&] { return dot_const(log_v(a), r); }) < 1e-7);
    CHECK(fd_check(ps, [&] { return dot_const(scale(shift(a, 0.3), -1.7), r); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return mean_all(mul(a, b)); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return sum_all(mul(a, b)); }) < 1e-8);
}

TEST_CASE("matmul gradients across transpose variants", "[autodiff]") {
    Rng rng(102);
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            ParamSet<double> ps;
            auto a = ps.add("a", gc_detail::randn_tensor(ta ? std::vector<int>{4, 3} : std::vector<int>{3, 4}, 1.0, rng));
            auto b = ps.add("b", gc_detail::randn_tensor(tb ? std::vector<int>{5, 4} : std::vector<int>{4, 5}, 1.0, rng));
            auto r = gc_detail::randn_tensor({3, 5}, 1.0, rng);
            const double err = fd_check(ps, [&] { return dot_const(matmul(a, b, ta, tb), r); });
            INFO("ta=" << ta << " tb=" << tb);
            CHECK(err < 1e-7);
        }
    }
}

TEST_CASE("softmax and layernorm gradients", "[autodiff]") {
    Rng rng(103);
    ParamSet<double> ps;
    auto z = ps.add("z", gc_detail::randn_tensor({5, 7}, 1.0, rng));
    auto g = ps.add("g", gc_detail::rand_tensor({7}, 0.5, 1.5, rng));
    auto o = ps.add("o", gc_detail::randn_tensor({7}, 0.3, rng));
    auto r = gc_detail::randn_tensor({5, 7}, 1.0, rng);
    CHECK(fd_check(ps, [&] { return dot_const(softmax_rows(z), r); }) < 1e-7);
    CHECK(fd_check(ps, [&] { return dot_const(layernorm_rows(z, g, o), r); }) < 1e-6);
}

TEST_CASE("pooling and broadcast gradients", "[autodiff]") {
    Rng rng(104);
    ParamSet<double> ps;
    auto x = ps.add("x", gc_detail::randn_tensor({3, 4, 5}, 1.0, rng));
    auto s = ps.add("s", gc_detail::rand_tensor({3}, 0.3, 1.4, rng));
    auto m = ps.add("m", gc_detail::rand_tensor({1, 4, 5}, 0.2, 1.2, rng));
    auto rc = gc_detail::randn_tensor({3}, 1.0, rng);
    auto rs = gc_detail::randn_tensor({1, 4, 5}, 1.0, rng);
    auto rx = gc_detail::randn_tensor({3, 4, 5}, 1.0, rng);
    CHECK(fd_check(ps, [&] { return dot_const(global_mean_hw(x), rc); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(channel_mean(x), rs); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(channel_max(x), rs); }, 1e-7) < 1e-6);
    CHECK(fd_check(ps, [&] { return dot_const(mul_channel(x, s), rx); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(mul_spatial(x, m), rx); }) < 1e-8);
    auto rcc = gc_detail::randn_tensor({6, 4, 5}, 1.0, rng);
    CHECK(fd_check(ps, [&] { return dot_const(concat_channels(x, x), rcc); }) < 1e-8);
}

TEST_CASE("patchify and unpatchify are inverse index maps", "[autodiff]") {
    Rng rng(105);
    Tensor<double> img({1, 8, 8});
    for (auto& v : img.data) v = rng.normal();
    auto x = Var<double>::constant(img);
    auto tokens = patchify(x, 2);
    REQUIRE(tokens.shape() == std::vector<int>{16, 4});
    auto back = unpatchify(tokens, 1, 8, 8, 2);
    REQUIRE(back.val().data == img.data);

    ParamSet<double> ps;
    auto p = ps.add("p", gc_detail::randn_tensor({1, 8, 8}, 1.0, rng));
    auto r = gc_detail::randn_tensor({16, 4}, 1.0, rng);
    CHECK(fd_check(ps, [&] { return dot_const(patchify(p, 2), r); }) < 1e-8);
}

TEST_CASE("token block helpers", "[autodiff]") {
    Rng rng(106);
    ParamSet<double> ps;
    auto a = ps.add("a", gc_detail::randn_tensor({4, 3}, 1.0, rng));
    auto b = ps.add("b", gc_detail::randn_tensor({2, 3}, 1.0, rng));
    auto v = ps.add("v", gc_detail::randn_tensor({3}, 1.0, rng));
    auto rc = gc_detail::randn_tensor({6, 3}, 1.0, rng);
    CHECK(fd_check(ps, [&] { return dot_const(concat_rows<double>({a, b}), rc); }) < 1e-8);
    auto ra = gc_detail::randn_tensor({4, 3}, 1.0, rng);
    auto rm = gc_detail::randn_tensor({2, 3}, 1.0, rng);
    CHECK(fd_check(ps, [&] { return dot_const(add_row_broadcast(a, v), ra); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(mean_blocks(a, 2), rm); }) < 1e-8);
}

TEST_CASE("upsample and reshape gradients", "[autodiff]") {
    Rng rng(107);
    ParamSet<double> ps;
    auto x = ps.add("x", gc_detail::randn_tensor({2, 3, 4}, 1.0, rng));
    auto ru = gc_detail::randn_tensor({2, 6, 8}, 1.0, rng);
    auto rr = gc_detail::randn_tensor({6, 4}, 1.0, rng);
    CHECK(fd_check(ps, [&] { return dot_const(upsample_nearest2(x), ru); }) < 1e-8);
    CHECK(fd_check(ps, [&] { return dot_const(reshape(x, {6, 4}), rr); }) < 1e-8);
}

TEST_CASE("clamp passes gradient only inside the range", "[autodiff]") {
    Tensor<double> t({4});
    t.data = {-0.5, 0.25, 0.75, 1.5};
    ParamSet<double> ps;
    auto x = ps.add("x", t);
    auto y = dot_const(clamp_v(x, 0.0, 1.0), Tensor<double>::full({4}, 1.0));
    backward(y);
    CHECK(x.grad().data[0] == 0.0);
    CHECK(x.grad().data[1] == 1.0);
    CHECK(x.grad().data[2] == 1.0);
    CHECK(x.grad().data[3] == 0.0);
}

TEST_CASE("gradient accumulates across shared subexpressions", "[autodiff]") {
    // y = sum(a * a + a): dy/da = 2a + 1
    Tensor<double> t({3});
    t.data = {0.5, -1.0, 2.0};
    ParamSet<double> ps;
    auto a = ps.add("a", t);
    auto y = sum_all(add(mul(a, a), a));
    backward(y);
    for (int i = 0; i < 3; ++i)
        REQUIRE(a.grad().data[size_t(i)] == Catch::Approx(2 * t.data[size_t(i)] + 1).margin(1e-14));
}

TEST_CASE("no-grad mode builds no graph", "[autodiff]") {
    ParamSet<double> ps;
    auto a = ps.add("a", Tensor<double>::full({2}, 1.0));
    NoGradGuard ng;
    auto y = mean_all(square(a));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.n->parents.empty());
}

TEST_CASE("conv2d valid mode matches a hand computation", "[autodiff]") {
    // 3x3 box kernel over a 4x4 ramp, valid mode -> 2x2 window means
    Tensor<double> img({1, 4, 4});
    for (int i = 0; i < 16; ++i) img.data[size_t(i)] = i;
    Tensor<double> k({1, 1, 3, 3});
    for (auto& v : k.data) v = 1.0 / 9.0;
    NoGradGuard ng;
    auto out = conv2d(Var<double>::constant(img), Var<double>::constant(k), Var<double>(), 1, Pad::valid);
    REQUIRE(out.shape() == std::vector<int>{1, 2, 2});
    CHECK(out.val().data[0] == Catch::Approx(5.0).margin(1e-12));   // mean of 0,1,2,4,5,6,8,9,10
    CHECK(out.val().data[3] == Catch::Approx(10.0).margin(1e-12));
}

TEST_CASE("reflect padding mirrors without repeating the border", "[autodiff]") {
    // kernel picking the left neighbor: at column 0 reflect101 gives column 1
    Tensor<double> img({1, 1, 4});
    img.data = {1.0, 2.0, 3.0, 4.0};
    Tensor<double> k({1, 1, 1, 3});
    k.data = {1.0, 0.0, 0.0};
    NoGradGuard ng;
    auto out = conv2d(Var<double>::constant(img), Var<double>::constant(k), Var<double>(), 1, Pad::reflect);
    CHECK(out.val().data[0] == 2.0);  // reflected neighbor
    CHECK(out.val().data[1] == 1.0);
    CHECK(out.val().data[2] == 2.0);
    CHECK(out.val().data[3] == 3.0);
}

// Tour of the tensor layer: builds a two-layer conv net by hand, fits it to
// a fixed target mask with Adam, and prints the loss trajectory. Everything
// the segmentation model uses is visible here at toy scale.

#include <cstdio>
#include <vector>

#include "mcseg/adam.hpp"
#include "mcseg/ops.hpp"

using namespace mcseg;

int main() {
    Rng rng(7);
    auto randn = [&](Shape4 s, double scale) {
        auto t = Tensor4<float>::zeros(s, true);
        for (int64_t i = 0; i < t.numel(); ++i)
            t.ptr()[i] = static_cast<float>(rng.normal(0.0, scale));
        return t;
    };

    // input: one 8x8 image, one channel; target: its left half is class 1
    auto x = randn({1, 1, 8, 8}, 1.0);
    x.set_requires_grad(false);
    LabelMap target;
    target.n = 1;
    target.h = 8;
    target.w = 8;
    target.v.assign(64, 0);
    for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 4; ++xx) target.v[static_cast<size_t>(y) * 8 + xx] = 1;

    auto w1 = randn({8, 1, 3, 3}, 0.5);
    auto b1 = Tensor4<float>::zeros({1, 8, 1, 1}, true);
    auto w2 = randn({2, 8, 1, 1}, 0.5);
    auto b2 = Tensor4<float>::zeros({1, 2, 1, 1}, true);

    std::vector<NamedParam<float>> params{{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}};
    AdamState<float> adam;
    adam.lr = 0.05f;

    for (int step = 0; step < 30; ++step) {
        for (auto& p : params) p.tensor.zero_grad();
        auto h = relu(conv2d(x, w1, b1, 1, 1));
        auto logits = conv2d(h, w2, b2, 1, 0);
        auto loss = softmax_cross_entropy(logits, target);
        loss.backward();
        adam_step(params, adam);
        if (step % 10 == 0 || step == 29)
            std::printf("step %2d  loss %.4f\n", step, static_cast<double>(loss.ptr()[0]));
    }

    // count correct pixels at the end
    NoGradGuard ng;
    auto logits = conv2d(relu(conv2d(x, w1, b1, 1, 1)), w2, b2, 1, 0);
    int correct = 0;
    for (int i = 0; i < 64; ++i) {
        const bool fg = logits.ptr()[64 + i] > logits.ptr()[i];
        correct += fg == (target.v[static_cast<size_t>(i)] == 1);
    }
    std::printf("fit %d/64 pixels of the target mask\n", correct);
    return 0;
}

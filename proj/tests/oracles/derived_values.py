"""Independent scalar re-computation of the constants frozen in the C++ tests.

Plain Python floats (IEEE double) and scipy for the t-test; no code shared
with the library. Run: python3 tests/oracles/derived_values.py
"""
import itertools
import math

from scipy import stats

EPS = 1e-6
FA, FG = 0.25, 2.0


def focal_px(p, g):
    p = min(max(p, EPS), 1 - EPS)
    if g == 1:
        return -FA * (1 - p) ** FG * math.log(p)
    return -(1 - FA) * p ** FG * math.log(1 - p)


def focal(pred, gt):
    return sum(focal_px(p, g) for p, g in zip(pred, gt)) / len(pred)


def dice(pred, gt, smooth=1.0):
    inter = sum(p * g for p, g in zip(pred, gt))
    return 1 - (2 * inter + smooth) / (sum(pred) + sum(gt) + smooth)


def focal_dice(pred, gt):
    return 20 * focal(pred, gt) + dice(pred, gt)


def bce(p, y):
    p = min(max(p, EPS), 1 - EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def main():
    # focal+dice, pred 0.5 on 2x2, one GT pixel on
    print("focal_dice_half_one_pixel", repr(focal_dice([0.5] * 4, [1, 0, 0, 0])))

    # distillation spot value
    a, b = (0.8, 0.2), (0.6, 0.4)
    cos = (a[0] * b[0] + a[1] * b[1]) / (math.hypot(*a) * math.hypot(*b))
    print("dist_cos", repr(cos))
    print("dist_bce", repr(bce(max(cos, 0.0), 1.0)))

    # complementary loss with only no-object proposals, gamma 0.1, target ones 2x2
    print("comp_gamma_only", repr(focal_dice([0.1] * 4, [1, 1, 1, 1])))

    # matching cost, 2 targets (class 0 base, class 1 base) x 2 proposals on 2x2
    Y = [[0.6, 0.2], [0.3, 0.5], [0.1, 0.3]]  # (K+1)=3 rows, N=2 columns
    M = [[0.9, 0.8, 0.1, 0.2], [0.2, 0.1, 0.7, 0.9]]
    G = [[1, 1, 0, 0], [0, 0, 1, 1]]
    for t in range(2):
        row = []
        for i in range(2):
            row.append(-Y[t][i] + 20 * focal(M[i], G[t]) + dice(M[i], G[t]))
        print("cost_row", t, [repr(v) for v in row])
    # same with target 1 novel: classification term only
    print("cost_novel_row", [repr(-Y[1][i]) for i in range(2)])

    # loss_cls N=2 both 0.5
    print("cls_two_halves", repr(2 * math.log(2)))

    # hungarian example
    C = [[1, 2], [2, 1]]
    best = min(itertools.permutations(range(2)), key=lambda p: sum(C[t][p[t]] for t in range(2)))
    print("hungarian_2x2", best, sum(C[t][best[t]] for t in range(2)))

    # poly schedule at T/2
    print("poly_half", repr(1e-4 * 0.5 ** 0.9))

    # Welch example
    ra = [10, 10.1, 9.9, 10.05, 9.95]
    rb = [20, 20.1, 19.9, 20.05, 19.95]
    t, p = stats.ttest_ind(ra, rb, equal_var=False)
    print("welch_t", repr(t), "welch_p", repr(p))
    import statistics
    print("welch_sd", repr(statistics.stdev(ra)))
    # a less extreme pair, to pin the p-value path of the implementation
    ra2 = [27.1, 27.9, 27.4, 28.0, 27.3]
    rb2 = [26.8, 27.2, 26.5, 27.0, 26.9]
    t2, p2 = stats.ttest_ind(ra2, rb2, equal_var=False)
    print("welch2_t", repr(t2), "welch2_p", repr(p2))

    # F1 of a constant 0.9 scorer with similar fraction p
    p_sim = 3 / 8
    print("f1_const_sim", repr(2 * p_sim / (p_sim + 1)))

    # mIoU spot value
    print("iou_one_third", repr(1 / 3))


if __name__ == "__main__":
    main()

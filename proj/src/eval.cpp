#include "camoseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "camoseg/errors.hpp"

namespace camoseg::eval {

double mask_iou(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mask_iou");
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const bool av = a[i] > 0.5, bv = b[i] > 0.5;
        inter += av && bv;
        uni += av || bv;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

namespace {

double crowd_iou(const Tensor& pred, const Tensor& crowd) {
    // intersection over prediction area, the COCO crowd convention
    int64_t inter = 0, area = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        const bool pv = pred[i] > 0.5;
        area += pv;
        inter += pv && crowd[i] > 0.5;
    }
    return area == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(area);
}

struct Det {
    size_t image;
    size_t local;  // index within the image's (truncated, sorted) predictions
    double confidence;
};

// AP over one pooled detection set (one category, or everything pooled)
double ap_for_set(const std::vector<Det>& dets_sorted,
                  const std::vector<std::vector<const ScoredInstance*>>& preds,
                  const std::vector<std::vector<const GtInstance*>>& gts, double thr, int64_t n_gt) {
    if (n_gt == 0) return 0.0;
    std::vector<std::set<size_t>> gt_used(gts.size());
    std::vector<int> flags;  // 1 = TP, 0 = FP; crowd-ignored dets are skipped
    flags.reserve(dets_sorted.size());
    for (const auto& d : dets_sorted) {
        const ScoredInstance* p = preds[d.image][d.local];
        double best_iou = 0.0;
        int64_t best_gt = -1;
        for (size_t g = 0; g < gts[d.image].size(); ++g) {
            const GtInstance* gt = gts[d.image][g];
            if (gt->iscrowd) continue;
            if (gt_used[d.image].count(g)) continue;
            const double iou = mask_iou(p->mask, gt->mask);
            if (iou >= thr && iou > best_iou) {
                best_iou = iou;
                best_gt = static_cast<int64_t>(g);
            }
        }
        if (best_gt >= 0) {
            gt_used[d.image].insert(static_cast<size_t>(best_gt));
            flags.push_back(1);
            continue;
        }
        bool ignored = false;
        for (size_t g = 0; g < gts[d.image].size() && !ignored; ++g) {
            const GtInstance* gt = gts[d.image][g];
            if (gt->iscrowd && crowd_iou(p->mask, gt->mask) >= thr) ignored = true;
        }
        if (!ignored) flags.push_back(0);
    }
    // 101-point interpolated AP
    std::vector<double> precision, recall;
    int64_t tp = 0, fp = 0;
    for (int f : flags) {
        tp += f;
        fp += 1 - f;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    }
    // precision envelope from the right
    for (int64_t i = static_cast<int64_t>(precision.size()) - 2; i >= 0; --i)
        precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0;
    size_t k = 0;
    for (int r = 0; r <= 100; ++r) {
        const double rec = r / 100.0;
        while (k < recall.size() && recall[k] < rec) ++k;
        ap += (k < precision.size()) ? precision[k] : 0.0;
    }
    return ap / 101.0;
}

}  // namespace

EvalResult average_precision(const std::vector<std::vector<ScoredInstance>>& predictions,
                             const std::vector<std::vector<GtInstance>>& gts,
                             const std::vector<double>& thresholds, bool class_agnostic,
                             int64_t max_detections) {
    if (predictions.size() != gts.size()) throw ShapeError("average_precision: image count mismatch");

    int64_t total_gt = 0;
    for (const auto& g : gts)
        for (const auto& i : g) total_gt += !i.iscrowd;
    if (total_gt == 0) throw DomainError("average_precision: no ground-truth instances, AP undefined");

    // per-image sort by confidence, cap detections
    std::vector<std::vector<const ScoredInstance*>> preds(predictions.size());
    for (size_t im = 0; im < predictions.size(); ++im) {
        std::vector<const ScoredInstance*> v;
        for (const auto& p : predictions[im]) v.push_back(&p);
        std::stable_sort(v.begin(), v.end(),
                         [](const auto* a, const auto* b) { return a->confidence > b->confidence; });
        if (static_cast<int64_t>(v.size()) > max_detections) v.resize(max_detections);
        preds[im] = std::move(v);
    }
    std::vector<std::vector<const GtInstance*>> gtp(gts.size());
    for (size_t im = 0; im < gts.size(); ++im)
        for (const auto& g : gts[im]) gtp[im].push_back(&g);

    std::set<int64_t> cats;
    for (const auto& g : gts)
        for (const auto& i : g) cats.insert(i.category_id);

    EvalResult res;
    for (double thr : thresholds) {
        double ap;
        if (class_agnostic) {
            std::vector<Det> dets;
            for (size_t im = 0; im < preds.size(); ++im)
                for (size_t k = 0; k < preds[im].size(); ++k) dets.push_back({im, k, preds[im][k]->confidence});
            std::stable_sort(dets.begin(), dets.end(),
                             [](const Det& a, const Det& b) { return a.confidence > b.confidence; });
            ap = ap_for_set(dets, preds, gtp, thr, total_gt);
        } else {
            double sum = 0.0;
            for (int64_t cat : cats) {
                std::vector<std::vector<const ScoredInstance*>> pc(preds.size());
                std::vector<std::vector<const GtInstance*>> gc(gtp.size());
                int64_t n_gt = 0;
                for (size_t im = 0; im < preds.size(); ++im) {
                    for (auto* p : preds[im])
                        if (p->category_id == cat) pc[im].push_back(p);
                    for (auto* g : gtp[im])
                        if (g->category_id == cat) {
                            gc[im].push_back(g);
                            n_gt += !g->iscrowd;
                        }
                }
                std::vector<Det> dets;
                for (size_t im = 0; im < pc.size(); ++im)
                    for (size_t k = 0; k < pc[im].size(); ++k) dets.push_back({im, k, pc[im][k]->confidence});
                std::stable_sort(dets.begin(), dets.end(),
                                 [](const Det& a, const Det& b) { return a.confidence > b.confidence; });
                const double cat_ap = n_gt > 0 ? ap_for_set(dets, pc, gc, thr, n_gt) : 0.0;
                if (thr == thresholds.front()) res.per_category[cat] = cat_ap;
                sum += cat_ap;
            }
            ap = cats.empty() ? 0.0 : sum / static_cast<double>(cats.size());
        }
        res.per_threshold[thr] = ap;
    }
    double mean = 0.0;
    for (auto& [t, a] : res.per_threshold) mean += a;
    res.ap = mean / static_cast<double>(res.per_threshold.size());
    for (const auto& [t, a] : res.per_threshold) {
        if (std::abs(t - 0.50) < 1e-9) res.ap50 = a;
        if (std::abs(t - 0.75) < 1e-9) res.ap75 = a;
    }
    return res;
}

}  // namespace camoseg::eval

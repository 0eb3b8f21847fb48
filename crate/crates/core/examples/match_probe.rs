use mixdet_core::boxes::BBox;
use mixdet_core::mixer::{iou_match, MATCH_IOU_THRESHOLD, Match};
use mixdet_core::synth::LabeledBox;
use mixdet_core::rng::stream;
use rand::Rng;

fn exhaustive(ps: &[LabeledBox], gt: &[LabeledBox]) -> f64 {
    fn rec(pairs: &[Match], i: usize, up: &mut Vec<bool>, ug: &mut Vec<bool>) -> f64 {
        if i == pairs.len() { return 0.0; }
        let mut best = rec(pairs, i + 1, up, ug);
        let m = pairs[i];
        if !up[m.pseudo] && !ug[m.gt] {
            up[m.pseudo] = true; ug[m.gt] = true;
            best = best.max(m.iou + rec(pairs, i + 1, up, ug));
            up[m.pseudo] = false; ug[m.gt] = false;
        }
        best
    }
    let mut pairs = Vec::new();
    for (pi, p) in ps.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            let iou = p.bbox().iou(g.bbox());
            if iou >= MATCH_IOU_THRESHOLD { pairs.push(Match { pseudo: pi, gt: gi, iou }); }
        }
    }
    rec(&pairs, 0, &mut vec![false; ps.len()], &mut vec![false; gt.len()])
}

// Scene-like gt: boxes with pairwise IoU <= 0.4; pseudo = gt +- N(0,2)-ish jitter.
fn realistic(rng: &mut impl Rng) -> (Vec<LabeledBox>, Vec<LabeledBox>) {
    let n_gt = rng.random_range(1..=4);
    let mut gt: Vec<LabeledBox> = Vec::new();
    let mut attempts = 0;
    while gt.len() < n_gt && attempts < 100 {
        attempts += 1;
        let w = rng.random_range(10.0..26.0);
        let h = rng.random_range(10.0..26.0);
        let x0 = rng.random_range(0.0..(64.0 - w));
        let y0 = rng.random_range(0.0..(64.0 - h));
        let b = BBox::new(x0, y0, x0 + w, y0 + h).unwrap();
        if gt.iter().all(|g: &LabeledBox| g.bbox().iou(&b) <= 0.4) {
            gt.push(LabeledBox::human(b, rng.random_range(0..3)));
        }
    }
    let n_ps = rng.random_range(0..=gt.len());
    let mut ps = Vec::new();
    for i in 0..n_ps {
        let base = gt[i].bbox();
        // jitter roughly sigma 2 (uniform -3..3 as a stand-in)
        let j = |rng: &mut dyn rand::RngCore| -> f64 { rand::Rng::random_range(rng, -3.0..3.0) };
        let b = BBox::new(base.x_min() + j(rng), base.y_min() + j(rng), base.x_max() + j(rng), base.y_max() + j(rng));
        if let Ok(b) = b { ps.push(LabeledBox::pseudo(b, rng.random_range(0..3), 0.95).unwrap()); }
    }
    (gt, ps)
}

fn harsh(rng: &mut impl Rng) -> (Vec<LabeledBox>, Vec<LabeledBox>) {
    let n_gt = rng.random_range(1..=4);
    let n_ps = rng.random_range(1..=4);
    let mut gt = Vec::new();
    for _ in 0..n_gt {
        let x0 = rng.random_range(0.0..40.0);
        let y0 = rng.random_range(0.0..40.0);
        let w = rng.random_range(8.0..20.0);
        let h = rng.random_range(8.0..20.0);
        gt.push(LabeledBox::human(BBox::new(x0, y0, x0+w, y0+h).unwrap(), rng.random_range(0..3)));
    }
    let mut ps = Vec::new();
    for i in 0..n_ps {
        let base = gt[i % n_gt].bbox();
        let dx = rng.random_range(-4.0..4.0); let dy = rng.random_range(-4.0..4.0);
        let dw = rng.random_range(-2.0..4.0); let dh = rng.random_range(-2.0..4.0);
        if let Ok(b) = BBox::new(base.x_min()+dx, base.y_min()+dy, base.x_max()+dx+dw, base.y_max()+dy+dh) {
            ps.push(LabeledBox::pseudo(b, rng.random_range(0..3), 0.95).unwrap());
        }
    }
    (gt, ps)
}

fn run(name: &str, gen: fn(&mut rand_chacha::ChaCha8Rng) -> (Vec<LabeledBox>, Vec<LabeledBox>), trials: u64) {
    let mut rng = stream(99);
    let mut diverged = 0u64;
    let mut tested = 0u64;
    for _ in 0..trials {
        let (gt, ps) = gen(&mut rng);
        let mut ious: Vec<f64> = Vec::new();
        for p in &ps { for g in &gt {
            let v = p.bbox().iou(g.bbox());
            if v >= MATCH_IOU_THRESHOLD { ious.push(v); }
        }}
        ious.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if ious.windows(2).any(|w| (w[1]-w[0]).abs() < 1e-12) { continue; }
        tested += 1;
        let greedy: f64 = iou_match(&ps, &gt).iter().map(|m| m.iou).sum();
        let best = exhaustive(&ps, &gt);
        if (greedy - best).abs() > 1e-9 { diverged += 1; }
    }
    println!("{name}: {diverged}/{tested} diverged (of {trials} trials)");
}

fn main() {
    run("realistic", realistic, 20000);
    run("harsh", harsh, 20000);
}

//! Self-contained SVG rendering for stopping-curve plots: two series on
//! independent axes plus one vertical marker at the chosen step.

use looped_tf::inference::StoppingCurve;

const W: f64 = 640.0;
const H: f64 = 400.0;
const ML: f64 = 60.0; // margins
const MR: f64 = 60.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;

fn polyline(points: &[(f64, f64)], stroke: &str) -> String {
    let pts = points
        .iter()
        .map(|(x, y)| format!("{x:.1},{y:.1}"))
        .collect::<Vec<_>>()
        .join(" ");
    format!("<polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"2\" points=\"{pts}\"/>\n")
}

/// Renders the curve with a `class="chosen-step"` vertical line at the
/// maximum-confidence step.
pub fn stopcurve_svg(curve: &StoppingCurve, title: &str) -> String {
    let t_max = curve.t_max().max(1);
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let x_of = |step: usize| ML + plot_w * (step as f64 - 1.0) / ((t_max - 1).max(1) as f64);
    let ce_max = curve
        .self_ce
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(1e-9);
    let y_ce = |v: f64| MT + plot_h * (1.0 - (v / ce_max).clamp(0.0, 1.0));
    let y_acc = |v: f64| MT + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    ));
    // Axes.
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        H - MB
    ));
    s.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{MT}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        W - MR,
        W - MR,
        H - MB
    ));
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    // Axis labels.
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">step</text>\n",
        W / 2.0,
        H - 14.0
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-size=\"12\" transform=\"rotate(-90 16 {:.1})\" text-anchor=\"middle\">self cross-entropy (max {ce_max:.3})</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" transform=\"rotate(90 {:.1} {:.1})\" text-anchor=\"middle\">exact match</text>\n",
        W - 16.0,
        (MT + H - MB) / 2.0,
        W - 16.0,
        (MT + H - MB) / 2.0
    ));
    for (step, label) in [(1usize, "1"), (t_max, &t_max.to_string()[..])] {
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            x_of(step),
            H - MB + 16.0
        ));
    }

    let ce_pts: Vec<(f64, f64)> = curve
        .self_ce
        .iter()
        .enumerate()
        .map(|(i, &v)| (x_of(i + 1), y_ce(v)))
        .collect();
    let acc_pts: Vec<(f64, f64)> = curve
        .exact_match
        .iter()
        .enumerate()
        .map(|(i, &v)| (x_of(i + 1), y_acc(v)))
        .collect();
    s.push_str(&polyline(&ce_pts, "#d62728"));
    s.push_str(&polyline(&acc_pts, "#1f77b4"));

    // The one vertical marker: the step the confidence rule selects.
    let cx = x_of(curve.chosen_step);
    s.push_str(&format!(
        "<line class=\"chosen-step\" x1=\"{cx:.1}\" y1=\"{MT}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"#2ca02c\" stroke-width=\"2\" stroke-dasharray=\"6 3\"/>\n",
        H - MB
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#2ca02c\">chosen step {}</text>\n",
        cx + 6.0,
        MT + 14.0,
        curve.chosen_step
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#d62728\">self-CE</text>\n",
        ML + 8.0,
        MT + 14.0
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#1f77b4\">exact match</text>\n",
        ML + 8.0,
        MT + 28.0
    ));
    s.push_str("</svg>\n");
    s
}

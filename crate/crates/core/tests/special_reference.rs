//! Special functions against arbitrary-precision reference values produced by
//! `tests/oracles/special_reference.py`.

#![allow(clippy::excessive_precision)]

use factorlab::special::*;

fn close(got: f64, want: f64, rel: f64, what: &str) {
    let err = (got - want).abs();
    assert!(
        err <= rel * want.abs().max(1e-300) || err <= 1e-15 && want.abs() < 1.0,
        "{what}: got {got:e}, want {want:e}, err {err:e}"
    );
}

const INC_BETA: &[(f64, f64, f64, f64)] = &[
    (0.5, 0.5, 0.1, 0.20483276469913345754),
    (2.0, 3.0, 0.4, 0.52480000000000003837),
    (10.0, 0.5, 0.95, 0.31715157546554505738),
    (0.5, 30.0, 0.01, 0.56066563109474878862),
    (100.0, 100.0, 0.45, 0.078387932712220530466),
    (3.5, 1.25, 0.3, 0.021760471289191620172),
    (1.0, 7.0, 0.999, 1.0),
    (25.0, 4.0, 0.7, 0.015653623463027611491),
];
const GAMMA_Q: &[(f64, f64, f64)] = &[
    (0.5, 0.1, 0.65472084601857702044),
    (0.5, 4.0, 0.0046777349810472658379),
    (1.0, 2.0, 0.13533528323661269189),
    (3.0, 1.5, 0.80884683053805812988),
    (10.0, 12.0, 0.24239216167051234868),
    (50.0, 40.0, 0.92966493334060504556),
    (2.5, 30.0, 0.000000000012154569777183038948),
];
const LN_GAMMA: &[(f64, f64)] = &[
    (0.1, 2.252712651734205902),
    (0.5, 0.57236494292470008707),
    (1.5, -0.12078223763524522235),
    (3.7, 1.4280723266653881292),
    (10.0, 12.801827480081469611),
    (55.5, 166.32150615984036914),
    (171.0, 706.57306224578734711),
];
const NORMAL_CDF: &[(f64, f64)] = &[
    (-8.0, 0.00000000000000062209605742717841235),
    (-3.0, 0.0013498980316300945267),
    (-1.0, 0.15865525393145705141),
    (0.0, 0.5),
    (0.5, 0.69146246127401310364),
    (1.6448536269514722, 0.94999999999999994607),
    (2.5, 0.99379033467422386483),
    (6.0, 0.99999999901341235496),
];
const NORMAL_QUANTILE: &[(f64, f64)] = &[
    (1e-12, -7.0344838253011319326),
    (1e-06, -4.7534243088228989573),
    (0.025, -1.9599639845400542118),
    (0.05, -1.644853626951472688),
    (0.2, -0.84162123357291416552),
    (0.5, 0.0),
    (0.8, 0.8416212335729143638),
    (0.95, 1.6448536269514722843),
    (0.975, 1.9599639845400538556),
    (0.999999, 4.7534243088170877657),
];
const T_TWO_SIDED: &[(f64, f64, f64)] = &[
    (0.0, 5.0, 1.0),
    (1.0, 1.0, 0.5),
    (2.0, 10.0, 0.073388034770740365618),
    (2.5, 30.0, 0.018115649068066694102),
    (61.032, 100.0, 5.9629346893643484172e-81),
    (-3.0, 7.0, 0.019942126131992537922),
    (1.96, 100000.0, 0.049998563194301638034),
];
const F_UPPER: &[(f64, f64, f64, f64)] = &[
    (1.0, 5.0, 100.0, 0.42182989437197357031),
    (2.37, 3.0, 50.0, 0.081630204689425058919),
    (4.0, 1.0, 10.0, 0.073388034770740365618),
    (0.2, 10.0, 10.0, 0.99104993839861809503),
    (12.0, 12.0, 2000.0, 0.0000000000000000000000079246540587029049394),
];
const CHI2_UPPER: &[(f64, f64, f64)] = &[
    (3.84, 1.0, 0.050043521248705103189),
    (7.81, 3.0, 0.050106056350005941339),
    (15.5, 8.0, 0.050122054532665224503),
    (0.5, 2.0, 0.77880078307140486825),
    (100.0, 80.0, 0.064570368921132975762),
    (0.001, 3.0, 0.99999159208094195384),
];

#[test]
fn incomplete_beta() {
    for &(a, b, x, want) in INC_BETA {
        close(inc_beta(a, b, x), want, 1e-10, &format!("I_{x}({a}, {b})"));
    }
}

#[test]
fn upper_incomplete_gamma() {
    for &(a, x, want) in GAMMA_Q {
        close(gamma_q(a, x), want, 1e-10, &format!("Q({a}, {x})"));
        close(gamma_p(a, x), 1.0 - want, 1e-10, &format!("P({a}, {x})"));
    }
}

#[test]
fn log_gamma() {
    for &(x, want) in LN_GAMMA {
        close(ln_gamma(x), want, 1e-12, &format!("ln Γ({x})"));
    }
}

#[test]
fn normal_distribution() {
    for &(z, want) in NORMAL_CDF {
        close(normal_cdf(z), want, 1e-10, &format!("Φ({z})"));
    }
    for &(p, want) in NORMAL_QUANTILE {
        close(normal_quantile(p), want, 1e-8, &format!("Φ⁻¹({p})"));
    }
}

#[test]
fn test_distribution_tails() {
    for &(t, d, want) in T_TWO_SIDED {
        close(t_two_sided_p(t, d), want, 1e-10, &format!("t={t}, dof={d}"));
    }
    for &(f, a, b, want) in F_UPPER {
        close(f_upper_p(f, a, b), want, 1e-10, &format!("F={f} ({a}, {b})"));
    }
    for &(x, d, want) in CHI2_UPPER {
        close(chi2_upper_p(x, d), want, 1e-10, &format!("χ²={x}, dof={d}"));
    }
}

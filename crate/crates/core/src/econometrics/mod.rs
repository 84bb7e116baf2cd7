//! OLS with HC3-robust standard errors, Welch two-sample tests and seeded
//! permutation nulls.

mod design;
mod ols;
mod permutation;
mod welch;

pub use design::{
    build_design, hour_term, term_hour, week_of, CongestionRegressor, Dependent, Design, FixedEffect, ModelSpec,
    HOURS, INTERCEPT,
};
pub use ols::{
    adj_r2, classical_se, fit, hc3_se, ols_fit, stars, two_sided_p, FitResult, OlsFit, TermEstimate, LEVERAGE_TOL,
    RANK_TOL,
};
pub use permutation::{
    draw_hours, permutation_null, PermutationConfig, PermutationNull, DEFAULT_REPLICATIONS, RNG_ALGORITHM,
};
pub use welch::{welch_t, WelchResult};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::fixed::{wei_to_eth, Ppb};
    use crate::ingest::{build_panel, Address, BlockFullness, BlockRow, Firm, TxBatch, TxRecord};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rust_decimal::Decimal;

    /// Gauss-Jordan inverse with partial pivoting, kept independent of the
    /// QR path.
    fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..k).map(|j| f64::from(u8::from(i == j))));
                r
            })
            .collect();
        for c in 0..k {
            let p = (c..k).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, p);
            let d = m[c][c];
            for v in m[c].iter_mut() {
                *v /= d;
            }
            for r in 0..k {
                if r != c {
                    let f = m[r][c];
                    let pivot = m[c].clone();
                    for (v, pv) in m[r].iter_mut().zip(pivot) {
                        *v -= f * pv;
                    }
                }
            }
        }
        m.into_iter().map(|r| r[k..].to_vec()).collect()
    }

    /// Brute-force OLS and HC3 from normal equations: returns (beta, se).
    fn oracle(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, k) = (x.len(), x[0].len());
        let xtx: Vec<Vec<f64>> = (0..k)
            .map(|a| (0..k).map(|b| (0..n).map(|i| x[i][a] * x[i][b]).sum()).collect())
            .collect();
        let inv = invert(&xtx);
        let xty: Vec<f64> = (0..k).map(|a| (0..n).map(|i| x[i][a] * y[i]).sum()).collect();
        let beta: Vec<f64> = (0..k).map(|a| (0..k).map(|b| inv[a][b] * xty[b]).sum()).collect();
        let mut meat = vec![vec![0.0; k]; k];
        for i in 0..n {
            let fitted: f64 = (0..k).map(|a| x[i][a] * beta[a]).sum();
            let e = y[i] - fitted;
            let h: f64 = (0..k).map(|a| (0..k).map(|b| x[i][a] * inv[a][b] * x[i][b]).sum::<f64>()).sum();
            let w = e * e / ((1.0 - h) * (1.0 - h));
            for a in 0..k {
                for b in 0..k {
                    meat[a][b] += w * x[i][a] * x[i][b];
                }
            }
        }
        let se = (0..k)
            .map(|j| {
                let v: f64 = (0..k).map(|a| (0..k).map(|b| inv[j][a] * meat[a][b] * inv[b][j]).sum::<f64>()).sum();
                v.sqrt()
            })
            .collect();
        (beta, se)
    }

    fn to_matrix(x: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), x[0].len(), |i, j| x[i][j])
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn three_point_fixture() {
        let x = to_matrix(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let fit = ols_fit(&x, &y, &names(2)).unwrap();
        assert!((fit.coef[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((fit.coef[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_is_the_mean() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 10.0]);
        let fit = ols_fit(&x, &y, &names(1)).unwrap();
        assert!((fit.coef[0] - 4.0).abs() < 1e-12);
        assert_eq!(adj_r2(&fit.residuals, &y, 0), Some(0.0));
    }

    #[test]
    fn noiseless_recovery_and_zero_se() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, i as f64, ((i * i) % 5) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 0.5 + 2.0 * r[1] - 0.25 * r[2]).collect();
        let y = DVector::from_vec(y);
        let fit = ols_fit(&to_matrix(&rows), &y, &names(3)).unwrap();
        assert!(fit.residuals.amax() < 1e-10);
        assert!((fit.coef[1] - 2.0).abs() < 1e-10);
        let se = hc3_se(&fit).unwrap();
        assert!(se.amax() < 1e-9);
        assert!((adj_r2(&fit.residuals, &y, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hc3_matches_brute_force_n4() {
        let rows = vec![vec![1.0, 0.5], vec![1.0, -1.0], vec![1.0, 2.0], vec![1.0, 3.5]];
        let y = [0.2, -0.7, 1.9, 1.1];
        let (beta, se) = oracle(&rows, &y);
        let fit = ols_fit(&to_matrix(&rows), &DVector::from_row_slice(&y), &names(2)).unwrap();
        let prod = hc3_se(&fit).unwrap();
        for j in 0..2 {
            assert!((fit.coef[j] - beta[j]).abs() < 1e-10);
            assert!((prod[j] - se[j]).abs() < 1e-10, "{} vs {}", prod[j], se[j]);
        }
    }

    #[test]
    fn rank_deficiency_names_terms() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let err = ols_fit(&to_matrix(&rows), &DVector::from_vec(vec![1.0, 2.0, 3.0]), &["const".into(), "dup".into()])
            .unwrap_err();
        assert!(matches!(&err, Error::Estimation(m) if m.contains("dup")), "{err}");
    }

    #[test]
    fn perfect_leverage_row_is_rejected() {
        // the second column isolates row 3
        let rows = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let fit = ols_fit(&to_matrix(&rows), &DVector::from_vec(vec![1.0, 2.0, 3.0]), &names(2)).unwrap();
        let err = hc3_se(&fit).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn hc3_close_to_classical_under_homoskedasticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |i, _| 1.0 + 0.5 * x[(i, 1)] - 0.3 * x[(i, 2)] + rng.random_range(-1.0..1.0));
        let fit = ols_fit(&x, &y, &names(3)).unwrap();
        let robust = hc3_se(&fit).unwrap();
        let classical = classical_se(&fit);
        for j in 0..3 {
            let ratio = robust[j] / classical[j];
            assert!((ratio - 1.0).abs() < 0.15, "term {j}: ratio {ratio}");
        }
    }

    #[test]
    fn adj_r2_undefined_cases() {
        let y = DVector::from_vec(vec![2.0, 2.0, 2.0]);
        assert_eq!(adj_r2(&DVector::zeros(3), &y, 0), None);
        assert_eq!(adj_r2(&DVector::zeros(3), &DVector::from_vec(vec![1.0, 2.0, 3.0]), 2), None);
    }

    #[test]
    fn stars_thresholds() {
        assert_eq!(stars(Some(0.0005)), "***");
        assert_eq!(stars(Some(0.005)), "**");
        assert_eq!(stars(Some(0.03)), "*");
        assert_eq!(stars(Some(0.05)), "");
        assert_eq!(stars(None), "");
    }

    fn record(i: usize, hour: u8, block: u64, fee_usd: Decimal) -> TxRecord {
        let ts = 1_767_225_600 + i64::from(hour) * 3_600 + (i as i64 % 7) * 86_400;
        TxRecord {
            tx_hash: format!("0x{i:x}"),
            block_number: block,
            timestamp_utc: ts,
            hour_utc: hour,
            weekday: crate::ingest::weekday_of(ts),
            from_addr: Address::new("0xf"),
            to_addr: Some(Address::new("0xt")),
            contract_addr: None,
            gas_used: Some(21_000),
            gas_price: Some(1_000_000_000),
            fee_eth: wei_to_eth(21_000_000_000_000),
            fee_usd,
            usd_per_eth: Decimal::ZERO,
            is_error: false,
            input_data: String::new(),
            value_wei: None,
        }
    }

    fn panel_from(records: Vec<TxRecord>) -> crate::ingest::Panel {
        let blocks: Vec<BlockRow> = records.iter().map(|r| BlockRow { block_number: r.block_number, reward: 1 }).collect();
        let firm = Firm {
            firm_id: "F".into(),
            industry: "test".into(),
            address: Address::new("0xf"),
            deferrable_default: true,
            kappa: Decimal::ZERO,
        };
        build_panel(vec![firm], vec![TxBatch { firm_id: "F".into(), records }], &blocks).unwrap().0
    }

    #[test]
    fn design_one_row_per_hour_is_full_rank() {
        let recs = (0..24).map(|h| record(h, h as u8, h as u64, Decimal::ONE)).collect();
        let d = build_design(&panel_from(recs), &ModelSpec::base()).unwrap();
        assert_eq!(d.x.shape(), (24, 24));
        assert!(d.dropped.is_empty());
        assert_eq!(d.x.clone().svd(false, false).rank(1e-9), 24);
        assert_eq!(d.terms[0], "const");
        assert_eq!(d.terms[1], "h0");
        assert!(!d.terms.contains(&"h23".to_string()));
    }

    #[test]
    fn design_drops_empty_hours() {
        let recs = (0..5).map(|i| record(i, 23, i as u64, Decimal::ONE)).collect();
        let d = build_design(&panel_from(recs), &ModelSpec::base()).unwrap();
        assert_eq!(d.terms, vec!["const"]);
        assert_eq!(d.dropped.len(), 23);
        assert_eq!(d.warnings.len(), 23);
    }

    #[test]
    fn design_fullness_requires_congestion_pass() {
        let recs = (0..24).map(|h| record(h, h as u8, h as u64, Decimal::ONE)).collect();
        let mut panel = panel_from(recs);
        assert!(matches!(build_design(&panel, &ModelSpec::with_fullness()), Err(Error::Data(_))));
        for (i, b) in panel.blocks.values_mut().enumerate() {
            b.fullness = Some(BlockFullness::unclassified(Ppb::from_units(i as u64 * 1_000_000).unwrap()));
        }
        let d = build_design(&panel, &ModelSpec::with_fullness()).unwrap();
        assert_eq!(d.x.ncols(), 25);
        assert_eq!(d.terms.last().unwrap(), "phi_br");
    }

    #[test]
    fn empty_panel_is_a_data_error() {
        let panel = panel_from(Vec::new());
        assert!(matches!(fit(&panel, &ModelSpec::base()), Err(Error::Data(_))));
    }

    #[test]
    fn fit_recovers_noiseless_hour_premia() {
        let mut recs = Vec::new();
        for i in 0..(24 * 4) {
            let h = (i % 24) as u8;
            let premium = if (11..=18).contains(&h) { "0.05" } else { "0" };
            let fee = Decimal::from_str_exact("0.15").unwrap() + Decimal::from_str_exact(premium).unwrap();
            recs.push(record(i, h, i as u64, fee));
        }
        // break exact collinearity of residuals with a tiny, hour-balanced wiggle
        for (i, r) in recs.iter_mut().enumerate() {
            if i / 24 % 2 == 1 {
                r.fee_usd += Decimal::from_str_exact("0.001").unwrap();
            } else {
                r.fee_usd -= Decimal::from_str_exact("0.001").unwrap();
            }
        }
        let f = fit(&panel_from(recs), &ModelSpec::base()).unwrap();
        assert!((f.intercept().unwrap().coef - 0.15).abs() < 1e-8);
        for h in 0..23u8 {
            let truth = if (11..=18).contains(&h) { 0.05 } else { 0.0 };
            assert!((f.hour(h).unwrap().coef - truth).abs() < 1e-8, "h{h}");
        }
        assert_eq!(f.n, 96);
        assert_eq!(f.df_resid, 72);
    }

    #[test]
    fn fixed_effect_columns() {
        let recs: Vec<TxRecord> = (0..48).map(|i| record(i, (i % 24) as u8, i as u64, Decimal::ONE)).collect();
        let panel = panel_from(recs);
        let mut spec = ModelSpec::base();
        spec.fixed_effects.insert(FixedEffect::Week);
        spec.fixed_effects.insert(FixedEffect::Firm);
        let d = build_design(&panel, &spec).unwrap();
        // one firm: no firm dummies; timestamps span two Monday-based weeks
        assert!(d.terms.iter().all(|t| !t.starts_with("firm:")));
        assert_eq!(d.terms.iter().filter(|t| t.starts_with("week:")).count(), 1);
        assert_eq!(spec.label(), "base+firm+week");
    }

    fn random_case(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=3);
        let n = rng.random_range(k + 2..=10);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) }).collect())
            .collect();
        let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        (x, y)
    }

    #[test]
    fn oracle_equivalence_small_designs() {
        for seed in 0..200 {
            let (x, y) = random_case(seed);
            let (beta, se) = oracle(&x, &y);
            let fit = ols_fit(&to_matrix(&x), &DVector::from_vec(y.clone()), &names(x[0].len())).unwrap();
            let prod = hc3_se(&fit).unwrap();
            for j in 0..beta.len() {
                assert!((fit.coef[j] - beta[j]).abs() < 1e-10, "seed {seed} coef {j}");
                assert!((prod[j] - se[j]).abs() < 1e-10, "seed {seed} se {j}");
            }
        }
    }

    proptest! {
        #[test]
        fn residual_orthogonality_and_scale(seed in 0u64..1_000_000, c in 0.01f64..100.0) {
            let (x, y) = random_case(seed);
            let xm = to_matrix(&x);
            let yv = DVector::from_vec(y);
            let k = x[0].len();
            let fit = ols_fit(&xm, &yv, &names(k)).unwrap();
            let xte = xm.transpose() * &fit.residuals;
            let scale = xm.norm() * yv.norm();
            prop_assert!(xte.amax() <= 1e-8 * scale.max(1.0));
            prop_assert!(fit.residuals.sum().abs() <= 1e-8 * yv.norm().max(1.0));

            let scaled = ols_fit(&xm, &(&yv * c), &names(k)).unwrap();
            let se = hc3_se(&fit).unwrap();
            let se_c = hc3_se(&scaled).unwrap();
            for j in 0..k {
                prop_assert!((scaled.coef[j] - c * fit.coef[j]).abs() <= 1e-10 * (c * fit.coef[j].abs()).max(1.0));
                prop_assert!((se_c[j] - c * se[j]).abs() <= 1e-10 * (c * se[j]).max(1.0));
                if se[j] > 1e-12 {
                    prop_assert!((scaled.coef[j] / se_c[j] - fit.coef[j] / se[j]).abs() < 1e-10 * (fit.coef[j] / se[j]).abs().max(1.0));
                }
            }
            let r1 = adj_r2(&fit.residuals, &yv, k - 1);
            let r2 = adj_r2(&scaled.residuals, &(&yv * c), k - 1);
            if let (Some(a), Some(b)) = (r1, r2) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

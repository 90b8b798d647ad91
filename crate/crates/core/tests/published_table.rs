use specaug_core::metrics::{delta_m, MetricDirections, MetricReport};

fn row(rmse: f64, pcc: f64, heartbeat_error: f64, mdr: f64) -> MetricReport {
    MetricReport {
        rmse,
        pcc,
        heartbeat_error,
        mdr,
    }
}

// Published rows round each metric to 3-4 digits, so recomputed Δm% lands
// within a few hundredths of the printed column.
#[test]
fn every_published_row_reproduces() {
    let baseline = row(0.096, 0.8265, 8.82, 0.0673);
    let rows = [
        ("c-mixup", row(0.088, 0.8225, 7.55, 0.0614), 7.80),
        ("ada", row(0.097, 0.8128, 7.20, 0.0669), 4.12),
        ("rc-mixup", row(0.089, 0.8336, 7.72, 0.0579), 8.69),
        ("masked 10%", row(0.096, 0.8224, 6.89, 0.0667), 5.63),
        ("masked 15%", row(0.087, 0.8475, 6.96, 0.0519), 14.02),
        ("masked 20%", row(0.086, 0.8541, 6.21, 0.0530), 16.20),
        ("masked 25%", row(0.092, 0.8199, 6.16, 0.0636), 9.81),
        ("masked 30%", row(0.094, 0.8018, 6.55, 0.0659), 6.78),
    ];
    let dirs = MetricDirections::default();
    for (name, r, published) in rows {
        r.validate().unwrap();
        let d = delta_m(&r, &baseline, &dirs).unwrap();
        assert!((d - published).abs() <= 0.25, "{name}: {d:.3} vs {published}");
    }
    assert_eq!(delta_m(&baseline, &baseline, &dirs).unwrap(), 0.0);
}

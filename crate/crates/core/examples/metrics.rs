//! AUC with ties, threshold metrics and the Davies–Bouldin index.

use swarmlearn::metrics::{classification_report, confusion_at_threshold, davies_bouldin, roc_auc};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.9, 0.8, 0.8, 0.6, 0.55, 0.4, 0.3, 0.1];
    let labels = [1, 1, 0, 1, 0, 1, 0, 0];
    println!("AUC = {:.4}", roc_auc(&scores, &labels)?);

    let counts = confusion_at_threshold(&scores, &labels, 0.5);
    println!("{counts:?}");
    let report = classification_report(&scores, &labels, 0.5)?;
    println!(
        "sensitivity {:.3}, specificity {:.3}, precision {:.3}, F1 {:.3}",
        report.sensitivity, report.specificity, report.precision, report.f1
    );

    // Two clusters of two points, one unit from their centroids, ten apart.
    let points = [0.0, 0.0, 0.0, 2.0, 10.0, 0.0, 10.0, 2.0];
    println!("DBI = {}", davies_bouldin(&points, 2, &[0, 0, 1, 1])?);
    Ok(())
}

//! Error rates, clipped success scores, SNR and top-k matching.

use transfer_attack::metrics::{
    epsilon_for_target_snr, snr_db, targeted_success, text_error_rate, topk_match_accuracy, untargeted_success, Level,
};

fn main() -> transfer_attack::Result<()> {
    let reference = "the cat sat on the mat";
    let heard = "the cat sat on a hat";
    println!("WER {:.3}", text_error_rate(reference, heard, Level::Word));
    println!("CER {:.3}", text_error_rate(reference, heard, Level::Char));

    let target = "the bat sat on a hat";
    println!("targeted (word) {:.3}", targeted_success(heard, target, Level::Word)?.value);
    println!("untargeted (word) {:.3}", untargeted_success(heard, reference, Level::Word)?.value);

    let signal: Vec<f64> = (0..16000).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect();
    let eps = epsilon_for_target_snr(&signal, 30.0)?;
    let noise: Vec<f64> = (0..signal.len()).map(|i| if i % 2 == 0 { eps } else { -eps }).collect();
    println!("eps for 30 dB: {eps:.5} -> SNR {:.3} dB", snr_db(&signal, &noise)?);

    let output = [0.1, 0.05, 0.05, 0.05, 0.35, 0.2, 0.05, 0.05, 0.05, 0.05];
    let goal = [0.0, 0.17, 0.0, 0.0, 0.55, 0.28, 0.0, 0.0, 0.0, 0.0];
    println!("top-3 match {:.3}", topk_match_accuracy(&output, &goal, 3)?);
    Ok(())
}

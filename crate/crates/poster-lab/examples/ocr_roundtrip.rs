//! Render synthetic posters, read the text back with the template-matching
//! reader, and score it with sentence accuracy and normalized edit distance.

use posterlab::data::{gen_sample, DatasetConfig};
use posterlab::eval::{align_lines, ned, ocr};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DatasetConfig::default();
    let mut total_lines = 0usize;
    let mut exact = 0usize;
    let mut ned_sum = 0.0;

    for seed in 0..20u64 {
        let sample = gen_sample(&cfg, seed)?;
        let pred = ocr(&sample.image, &cfg);
        let alignment = align_lines(&pred, &sample.layout);
        for (pi, gi) in &alignment {
            let gt = &sample.layout.lines[*gi].content;
            let read = pi.map(|p| pred[p].text.as_str()).unwrap_or("");
            ned_sum += ned(read, gt);
            total_lines += 1;
            if read == gt {
                exact += 1;
            } else {
                println!("seed {seed}: expected {gt:?}, read {read:?}");
            }
        }
    }

    println!(
        "clean-render OCR: sentence accuracy {}/{} , mean NED {:.4}",
        exact,
        total_lines,
        ned_sum / total_lines as f64
    );
    assert_eq!(exact, total_lines, "reader must be exact on clean renders");
    Ok(())
}

//! Generate a handful of synthetic poster samples, save them in the binary
//! dataset format, reload them, and dump PNG previews of image / subject
//! mask / inpainting mask.

use posterlab::data::{gen_sample, load_dataset, make_mask, save_dataset, DatasetConfig, Image, MaskRegime};
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DatasetConfig::default();
    let samples: Result<Vec<_>, _> = (0..6u64).map(|s| gen_sample(&cfg, s)).collect();
    let samples = samples?;

    let out = Path::new("target/example_out");
    std::fs::create_dir_all(out)?;
    let ds = out.join("demo.plds");
    save_dataset(&cfg, &samples, &ds)?;
    let (cfg2, reloaded) = load_dataset(&ds)?;
    assert_eq!(cfg.hash(), cfg2.hash());
    assert_eq!(samples, reloaded);
    println!("round-tripped {} samples through {}", reloaded.len(), ds.display());

    for (i, s) in samples.iter().enumerate() {
        s.image.save_png(&out.join(format!("poster_{i}.png")))?;
        // Visualize the poster-regime mask (text + background, subject kept).
        let mask = make_mask(s, MaskRegime::Poster, s.seed);
        let mut vis = s.image.clone();
        for y in 0..vis.height {
            for x in 0..vis.width {
                if mask.get(x, y) {
                    let px = vis.get(x, y);
                    vis.set(x, y, [px[0] * 0.3 + 0.7, px[1] * 0.3, px[2] * 0.3]);
                }
            }
        }
        vis.save_png(&out.join(format!("poster_{i}_mask.png")))?;
        let mut subject = Image { width: s.image.width, height: s.image.height, data: vec![0.0; s.image.data.len()] };
        for y in 0..subject.height {
            for x in 0..subject.width {
                if s.product_mask.get(x, y) {
                    subject.set(x, y, s.image.get(x, y));
                }
            }
        }
        subject.save_png(&out.join(format!("poster_{i}_subject.png")))?;
        let texts: Vec<&str> = s.layout.lines.iter().map(|l| l.content.as_str()).collect();
        println!("sample {i}: style {:?}, lines {:?}", s.style_id, texts);
    }
    println!("previews written to {}", out.display());
    Ok(())
}

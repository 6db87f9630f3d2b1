//! Renders Gaussian targets for a few keypoints and decodes them back.

use kanfpn::pose::{decode_keypoints, render_targets, Keypoint};
use kanfpn_autodiff::Tensor;

fn main() -> kanfpn::Result<()> {
    let stride = 4.0;
    let kps = vec![vec![
        Keypoint::new(10.0, 12.0),
        Keypoint::new(21.3, 40.7),
        Keypoint::new(33.9, 5.2),
        Keypoint::hidden(),
    ]];
    let heatmaps: Tensor<f32> = render_targets(&kps, (16, 12), stride, 2.0)?;
    let decoded = decode_keypoints(&heatmaps, stride)?;
    for (kp, d) in kps[0].iter().zip(&decoded[0]) {
        if kp.visible {
            let err = (d.x - kp.x).hypot(d.y - kp.y);
            println!("({:5.1}, {:5.1}) -> ({:5.2}, {:5.2})  error {:.2} px, score {:.3}", kp.x, kp.y, d.x, d.y, err, d.score);
        } else {
            println!("hidden       -> score {:.3}", d.score);
        }
    }
    Ok(())
}

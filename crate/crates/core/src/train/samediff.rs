use crate::error::{Error, Result};
use crate::nn::tensor::cosine;

/// Same-different average precision.
///
/// Every unordered pair of embeddings is scored by cosine similarity; a pair is
/// relevant when both labels match. The result is the mean, over relevant pairs,
/// of the precision at that pair's rank in the similarity-descending order.
/// Equal similarities keep pair enumeration order (`(i, j)` with `i < j`).
pub fn same_different_ap<S: AsRef<str>>(items: &[(S, Vec<f32>)]) -> Result<f64> {
    if items.len() < 2 {
        return Err(Error::NoSameLabelPairs);
    }
    let mut pairs = Vec::with_capacity(items.len() * (items.len() - 1) / 2);
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let sim = cosine(&items[i].1, &items[j].1).ok_or_else(|| {
                let zero = if cosine(&items[i].1, &items[i].1).is_none() { i } else { j };
                Error::ZeroNormEmbedding(zero)
            })?;
            pairs.push((sim, items[i].0.as_ref() == items[j].0.as_ref()));
        }
    }
    let n_relevant = pairs.iter().filter(|(_, same)| *same).count();
    if n_relevant == 0 {
        return Err(Error::NoSameLabelPairs);
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, (_, same)) in pairs.iter().enumerate() {
        if *same {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_relevant as f64)
}

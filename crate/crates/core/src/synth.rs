//! Seeded synthetic Solidity corpora used by tests, benches and the
//! committed fixtures.
//!
//! Every intent has its own function templates, so intent markers are
//! separable at the function level. Filler functions carry no intent.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::dataset::{Intent, IntentLabelVector, SourceContract, NUM_CLASSES};
use crate::extractor::{extract_functions, FunctionUnit};
use crate::rng;

/// Three owner-controlled functions exposing MaxTX, Fee and DisableTrading.
pub const SAMPLE_SOURCE: &str = "\
function setTxLimit(uint256 amount) external authorized {
    _maxTxAmount = amount;
}

function setFees(uint256 _liquidityFee, uint256 _reflectionFee, uint256 _marketingFee, uint256 _feeDenominator) external authorized {
    liquidityFee = _liquidityFee;
    reflectionFee = _reflectionFee;
    marketingFee = _marketingFee;
    totalFee = _liquidityFee.add(_reflectionFee).add(_marketingFee);
    feeDenominator = _feeDenominator;
    require(totalFee < feeDenominator / 4);
}

function tradingStatus(bool _status) public onlyOwner {
    tradingOpen = _status;
}
";

const NUMBERS: [&str; 4] = ["4", "10", "25", "100"];

fn intent_templates(intent: Intent) -> &'static [&'static str] {
    match intent {
        Intent::Fee => &[
            "function setFees(uint256 _liquidityFee, uint256 _reflectionFee, uint256 _marketingFee, uint256 _feeDenominator) external authorized {
    liquidityFee = _liquidityFee;
    reflectionFee = _reflectionFee;
    marketingFee = _marketingFee;
    totalFee = _liquidityFee.add(_reflectionFee).add(_marketingFee);
    feeDenominator = _feeDenominator;
    require(totalFee < feeDenominator / {k});
}",
            "function updateFees(uint256 _liquidityFee, uint256 _marketingFee) external onlyOwner {
    liquidityFee = _liquidityFee;
    marketingFee = _marketingFee;
    totalFee = _liquidityFee.add(_marketingFee);
    require(totalFee <= {k});
}",
        ],
        Intent::DisableTrading => &[
            "function tradingStatus(bool _status) public onlyOwner {
    tradingOpen = _status;
}",
            "function setTradingEnabled(bool _enabled) external onlyOwner {
    tradingEnabled = _enabled;
}",
        ],
        Intent::Blacklist => &[
            "function blacklistAddress(address account, bool value) external onlyOwner {
    isBlacklisted[account] = value;
}",
            "function addToBlacklist(address[] calldata accounts) external onlyOwner {
    for (uint256 i = 0; i < accounts.length; i++) {
        isBlacklisted[accounts[i]] = true;
    }
}",
        ],
        Intent::Reflect => &[
            "function reflectionFromToken(uint256 tAmount) public view returns (uint256) {
    require(tAmount <= _tTotal, \"Amount must be less than supply\");
    uint256 currentRate = _getRate();
    return tAmount.mul(currentRate);
}",
            "function tokenFromReflection(uint256 rAmount) public view returns (uint256) {
    require(rAmount <= _rTotal, \"Amount must be less than total reflections\");
    uint256 currentRate = _getRate();
    return rAmount.div(currentRate);
}",
        ],
        Intent::MaxTX => &[
            "function setTxLimit(uint256 amount) external authorized {
    _maxTxAmount = amount;
}",
            "function setMaxTxPercent(uint256 maxTxPercent) external onlyOwner {
    _maxTxAmount = _tTotal.mul(maxTxPercent).div({k});
}",
        ],
        Intent::Mint => &[
            "function mint(address to, uint256 amount) external onlyOwner {
    _totalSupply = _totalSupply.add(amount);
    _balances[to] = _balances[to].add(amount);
    emit Transfer(address(0), to, amount);
}",
            "function mintTokens(uint256 amount) public onlyOwner {
    _balances[msg.sender] = _balances[msg.sender].add(amount);
    _totalSupply = _totalSupply.add(amount);
}",
        ],
        Intent::Honeypot => &[
            "function _transfer(address from, address to, uint256 amount) internal {
    if (from != owner() && !isWhitelisted[from]) {
        require(block.timestamp > launchTime + {k}, \"locked\");
    }
    _balances[from] = _balances[from].sub(amount);
    _balances[to] = _balances[to].add(amount);
}",
            "function _beforeTokenTransfer(address from, address to) internal view {
    if (to == pair && from != owner()) {
        require(canSell[from], \"sell blocked\");
    }
}",
        ],
        Intent::Reward => &[
            "function claimReward() external {
    uint256 reward = pendingReward[msg.sender];
    pendingReward[msg.sender] = 0;
    rewardToken.transfer(msg.sender, reward);
}",
            "function distributeRewards(uint256 gas) external onlyOwner {
    uint256 iterations = 0;
    while (gas > {k} && iterations < shareholders.length) {
        processReward(shareholders[iterations]);
        iterations++;
    }
}",
        ],
        Intent::Rebase => &[
            "function rebase(uint256 epoch, int256 supplyDelta) external onlyOwner returns (uint256) {
    if (supplyDelta < 0) {
        _totalSupply = _totalSupply.sub(uint256(-supplyDelta));
    } else {
        _totalSupply = _totalSupply.add(uint256(supplyDelta));
    }
    _gonsPerFragment = TOTAL_GONS.div(_totalSupply);
    return _totalSupply;
}",
            "function setRebaseRate(uint256 rate) external onlyOwner {
    require(rate <= {k});
    rebaseRate = rate;
}",
        ],
        Intent::MaxSell => &[
            "function setMaxSellAmount(uint256 amount) external onlyOwner {
    require(amount >= {k});
    maxSellAmount = amount;
}",
            "function setSellLimit(uint256 limit) external onlyOwner {
    maxSellPerDay = limit;
}",
        ],
    }
}

const FILLERS: [&str; 7] = [
    "function balanceOf(address account) public view returns (uint256) {
    return _balances[account];
}",
    "function totalSupply() public view returns (uint256) {
    return _totalSupply;
}",
    "function approve(address spender, uint256 amount) public returns (bool) {
    _allowances[msg.sender][spender] = amount;
    emit Approval(msg.sender, spender, amount);
    return true;
}",
    "function allowance(address holder, address spender) public view returns (uint256) {
    return _allowances[holder][spender];
}",
    "function name() public view returns (string memory) {
    return _name;
}",
    "function decimals() public pure returns (uint8) {
    return {k};
}",
    "function transfer(address to, uint256 amount) public returns (bool) {
    _transfer(msg.sender, to, amount);
    return true;
}",
];

fn fill(template: &str, r: &mut rng::Rng) -> String {
    let k = NUMBERS.choose(r).expect("nonempty");
    template.replace("{k}", k)
}

pub fn intent_function(intent: Intent, r: &mut rng::Rng) -> String {
    let t = intent_templates(intent).choose(r).expect("nonempty");
    fill(t, r)
}

pub fn filler_function(r: &mut rng::Rng) -> String {
    let t = FILLERS.choose(r).expect("nonempty");
    fill(t, r)
}

/// `contract <name> { ... }` around the given functions, indented.
pub fn wrap_contract(name: &str, functions: &[String]) -> String {
    let mut s = format!("pragma solidity ^0.8.0;\n\ncontract {name} {{\n");
    for (i, f) in functions.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        for line in f.lines() {
            s.push_str("    ");
            s.push_str(line);
            s.push('\n');
        }
    }
    s.push_str("}\n");
    s
}

fn address(r: &mut rng::Rng) -> String {
    let bytes: [u8; 20] = r.random();
    format!("0x{}", hex::encode(bytes))
}

/// One intent function per positive label plus one to three fillers, in shuffled
/// order.
pub fn contract_with_labels(name: &str, labels: IntentLabelVector, r: &mut rng::Rng) -> SourceContract {
    let mut functions: Vec<String> = labels.intents().into_iter().map(|c| intent_function(c, r)).collect();
    let fillers = r.random_range(1..=3);
    functions.extend((0..fillers).map(|_| filler_function(r)));
    functions.shuffle(r);
    SourceContract {
        id: address(r),
        source: wrap_contract(name, &functions),
        labels,
    }
}

pub fn sample_contract() -> SourceContract {
    SourceContract {
        id: "0x000000000000000000000000000000000000c0de".into(),
        source: format!("pragma solidity ^0.8.0;\n\ncontract SampleToken {{\n{SAMPLE_SOURCE}}}\n"),
        labels: IntentLabelVector::from_intents(&[Intent::Fee, Intent::DisableTrading, Intent::MaxTX]),
    }
}

/// `n` functions drawn from intent templates and fillers.
pub fn mlm_corpus(n: usize, seed: u64) -> Vec<FunctionUnit> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let text = if r.random_bool(0.6) {
                intent_function(*Intent::ALL.choose(&mut r).expect("nonempty"), &mut r)
            } else {
                filler_function(&mut r)
            };
            let mut unit = extract_functions(&text)
                .expect("templates are balanced")
                .into_iter()
                .next()
                .expect("one function per template");
            unit.ordinal = i;
            unit
        })
        .collect()
}

/// The sample contract first, then contracts whose primary intent
/// cycles through all ten classes, each with every other intent added with
/// probability 0.15.
pub fn separable_contracts(n: usize, seed: u64) -> Vec<SourceContract> {
    let mut r = rng::seeded(seed);
    let mut out = vec![sample_contract()];
    for i in 1..n {
        let mut bits = [false; NUM_CLASSES];
        bits[i % NUM_CLASSES] = true;
        for b in bits.iter_mut() {
            if r.random_bool(0.15) {
                *b = true;
            }
        }
        out.push(contract_with_labels(&format!("Token{i}"), IntentLabelVector(bits), &mut r));
    }
    out.truncate(n);
    out
}

/// `n` contracts where `rare` is positive on exactly `rare_count` of them
/// (spread evenly) and every other intent with probability `p_common`.
pub fn skewed_contracts(n: usize, rare: Intent, rare_count: usize, p_common: f64, seed: u64) -> Vec<SourceContract> {
    let mut r = rng::seeded(seed);
    let stride = n / rare_count.max(1);
    (0..n)
        .map(|i| {
            let mut bits = [false; NUM_CLASSES];
            for (c, b) in bits.iter_mut().enumerate() {
                *b = if c == rare.index() {
                    rare_count > 0 && i % stride == stride / 2 && i / stride < rare_count
                } else {
                    r.random_bool(p_common)
                };
            }
            contract_with_labels(&format!("Skew{i}"), IntentLabelVector(bits), &mut r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::contract_to_units;

    #[test]
    fn every_template_is_one_function() {
        let mut r = rng::seeded(0);
        for c in Intent::ALL {
            for t in intent_templates(c) {
                assert_eq!(extract_functions(&fill(t, &mut r)).unwrap().len(), 1, "{c}");
            }
        }
        for t in FILLERS {
            assert_eq!(extract_functions(t).unwrap().len(), 1);
        }
    }

    #[test]
    fn contracts_extract_to_label_plus_fillers() {
        for c in separable_contracts(40, 3) {
            let n = contract_to_units(&c).unwrap().len();
            let k = c.labels.intents().len();
            assert!(n > k && n <= k + 3 || c == sample_contract(), "{n} {k}");
        }
    }

    #[test]
    fn separable_cover_all_classes() {
        let data = separable_contracts(40, 3);
        for c in Intent::ALL {
            assert!(data.iter().any(|d| d.labels.get(c)), "{c}");
        }
    }

    #[test]
    fn skewed_rare_count() {
        let data = skewed_contracts(200, Intent::Honeypot, 4, 0.25, 1);
        assert_eq!(data.iter().filter(|d| d.labels.get(Intent::Honeypot)).count(), 4);
    }

    #[test]
    fn corpus_is_seeded() {
        assert_eq!(mlm_corpus(20, 5), mlm_corpus(20, 5));
        assert_ne!(mlm_corpus(20, 5), mlm_corpus(20, 6));
    }
}

#!/usr/bin/env python3
"""Regenerates the fixture files under tests/data. Output is deterministic."""
import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
rng = random.Random(20240601)

# Common ideographs, so every generated stem is readable-looking Chinese.
HANZI = ("的一是在不了有和人这中大为上个国我以要他时来用们生到作地于出就分对成会可主发年动同工也能下过子说产种面而方后多定行"
         "学法所民得经十三之进着等部度家电力里如水化高自二理起小物现实加量都两体制机当使点从业本去把性好应开它合还因由其些然前外天政"
         "四日那社义事平形相全表间样与关各重新线内数正心反你明看原又么利比或但质气第向道命此变条只没结解问意建月公无系军很情者最立代想"
         "已通并提直题党程展五果料象员革位入常文总次品式活设及管特件长求老头基资边流路级少图山统接知较将组见计别她手角期根论运农指几九"
         "区强放决西被干做必战先回则任取据处理府研质")


def stem(n_chars):
    return "".join(rng.choice(HANZI) for _ in range(n_chars))


def options_text(n):
    return " ".join(f"{chr(65 + i)}.{rng.randint(1, 99)}%" for i in range(n))


def make_corpus():
    """200 raw items: 163 distinct plus 37 duplicates of earlier items."""
    items = []
    originals = []
    for i in range(163):
        n_opt = [2, 3, 4, 4, 5, 0][i % 6]
        if i % 40 == 7:
            # English-only: empty dedup key, never a duplicate of anything.
            q = f"Which statement about account {i} is correct? " + options_text(4)
            ans = "B"
        else:
            q = stem(rng.randint(12, 45)) + "?" + (options_text(n_opt) if n_opt else "")
            ans = chr(65 + rng.randrange(n_opt)) if n_opt else "略"
        text = f"{q} 答案：{ans}。解析：{stem(8)}"
        item = {"id": f"c{i:03d}", "text": text, "source": "fixture"}
        items.append(item)
        if i % 40 != 7:
            originals.append((item, q, ans))
    dups = []
    variants = ["exact", "punct", "space", "tail", "answer"]
    chosen = rng.sample(range(len(originals)), 37)
    for j, idx in enumerate(chosen):
        item, q, ans = originals[idx]
        kind = variants[j % len(variants)]
        if kind == "exact":
            text = item["text"]
        elif kind == "punct":
            text = q.replace("?", "？") + "！" + f" 答案: {ans}"
        elif kind == "space":
            text = "  " + item["text"] + "   \n"
        elif kind == "tail":
            # Same first 30 ideographs, different ending: collides only when the
            # stem is long enough, so pad the key region explicitly.
            text = q + f" 答案：{ans}。解析：另有说明"
        else:
            text = q + " 答案：" + ans
        dups.append({"id": f"d{j:03d}", "text": text, "source": "fixture-dup"})
    # Duplicates follow every original, so the original is always the survivor.
    order = items + dups
    with open(HERE / "corpus/raw_200.jsonl", "w", encoding="utf-8") as f:
        for it in order:
            f.write(json.dumps(it, ensure_ascii=False) + "\n")
    with open(HERE / "corpus/duplicates.txt", "w", encoding="utf-8") as f:
        for d in dups:
            f.write(d["id"] + "\n")


LABELED = [
    ("什么是增值税? 答案：增值税是以商品和劳务在流转过程中产生的增值额作为计税依据而征收的一种流转税。", "knowledge_inquiry"),
    ("简述资产负债表的作用。 答案：反映企业在某一特定日期的财务状况，包括资产、负债和所有者权益。", "knowledge_inquiry"),
    ("什么是市盈率? 答案：股票价格与每股收益的比值，用于衡量估值水平。", "knowledge_inquiry"),
    ("What is a bond covenant? Answer: A contractual clause that restricts or obliges the issuer.", "knowledge_inquiry"),
    ("固定资产折旧的含义是什么? 答案：在使用寿命内按确定的方法对应计折旧额进行系统分摊。", "knowledge_inquiry"),
    ("某公司净利润200万元，股本100万股，每股收益为多少? 答案：2元。解析：200/100=2", "calculation_reasoning"),
    ("本金1000元，年利率5%，复利2年本息和? 答案：1102.5元。解析：1000*(1+5%)^2=1102.5", "calculation_reasoning"),
    ("销售收入500万元，成本300万元，毛利率? 答案：40%。解析：(500-300)/500=40%", "calculation_reasoning"),
    ("某资产原值120万元，残值0，使用年限10年，直线法年折旧额? 答案：12万元。解析：120/10=12", "calculation_reasoning"),
    ("A portfolio returns 8% with beta 1.2, risk-free 2%, market 7%. Alpha? Answer: 0. 8%-(2%+1.2*5%)=0%", "calculation_reasoning"),
    ("判断：企业所得税的基本税率为25%。 答案：正确", "logical_judgment"),
    ("判断：存货跌价准备一经计提不得转回。 答案：错误", "logical_judgment"),
    ("以下说法是否正确：上市公司必须每季度披露报告。 答案：对", "logical_judgment"),
    ("True or false: a callable bond usually has a higher yield. Answer: true", "logical_judgment"),
    ("判断对错：商誉需要每年进行减值测试。 答案：对", "logical_judgment"),
    ("下列属于流动资产的是? A.存货 B.固定资产 C.无形资产 D.长期股权投资 答案：A。解析：存货预计在一个正常营业周期中变现。", "reading_comprehension"),
    ("根据材料，下列关于收入确认的表述正确的是? A.按合同履约进度确认 B.收到现金时确认 C.签约时确认 D.发货前确认 答案：A", "reading_comprehension"),
    ("下列各项中，应计入管理费用的是? A.广告费 B.业务招待费 C.借款利息 D.销售佣金 答案：B。解析：业务招待费属于管理费用。", "reading_comprehension"),
    ("Which of the following is a leading indicator? A.Unemployment rate B.Building permits C.CPI 答案：B", "reading_comprehension"),
    ("关于注册会计师独立性，下列说法正确的有? A.不得持有客户股票 B.可以代编财务报表 C.可以参与管理决策 D.可以收取或有费用 答案：A。解析：其余均损害独立性。", "reading_comprehension"),
]


def make_labeled():
    with open(HERE / "corpus/labeled_20.jsonl", "w", encoding="utf-8") as f:
        for i, (text, label) in enumerate(LABELED):
            f.write(json.dumps({"id": f"l{i:02d}", "text": text, "label": label}, ensure_ascii=False) + "\n")


DOCS = [
    # id, source_type, title, summary, body lines, companies, date
    ("r-moutai-2024q1", "report", "贵州茅台2024年一季报点评", "营收稳健增长，直销渠道占比提升。",
     ["贵州茅台一季度实现营业收入464.8亿元，同比增长18%。", "直销渠道收入占比提升至45%，毛利率维持在92%左右。",
      "我们维持买入评级，目标价2100元。"], ["贵州茅台", "Kweichow Moutai"], "2024-04-28"),
    ("r-moutai-valuation", "report", "贵州茅台估值分析", "当前估值处于历史中枢下方。",
     ["以2024年预测利润计算，茅台市盈率约为25倍。", "估值低于过去五年均值30倍，具备长期持有价值。"],
     ["贵州茅台", "Kweichow Moutai"], "2024-05-10"),
    ("r-byd-2024", "report", "比亚迪新能源汽车销量跟踪", "海外销量快速增长。",
     ["比亚迪5月新能源汽车销量33.2万辆，同比增长38%。", "海外销量3.8万辆，占比提升至11%。"],
     ["比亚迪"], "2024-06-03"),
    ("r-catl-2024", "report", "宁德时代储能业务深度报告", "储能电池出货量显著增长。",
     ["宁德时代储能电池出货量同比增长超过50%。", "公司在欧洲建设的工厂预计明年投产。"],
     ["宁德时代"], "2024-05-20"),
    ("r-cmb-2024", "report", "招商银行年报点评", "资产质量保持优异。",
     ["招商银行不良贷款率为0.95%，拨备覆盖率超过430%。", "零售金融业务贡献超过一半的营业收入。"],
     ["招商银行"], "2024-04-01"),
    ("n-xiaomi-su7", "news", "小米SU7发布配置详情", "小米汽车公布su7三个版本的配置。",
     ["小米su7标准版续航700公里，售价21.59万元。", "su7 Max版本搭载双电机，零百加速2.78秒。",
      "su7 Pro版本续航830公里。"], ["小米集团"], "2024-03-29"),
    ("n-qwen", "news", "通义千问大模型升级", "阿里云发布通义千问新版本。",
     ["通义千问在长文本理解方面优势明显，支持千万字文档输入。", "通义千问开源了多个尺寸的模型。"],
     ["阿里巴巴"], "2024-05-09"),
    ("n-wenxin", "news", "文心一言用户数突破两亿", "百度文心一言用户规模增长。",
     ["文心一言用户数突破两亿，日均调用量超过两亿次。", "文心一言在中文创作任务上表现突出。"],
     ["百度"], "2024-04-16"),
    ("n-moutai-price", "news", "飞天茅台批发价回落", "茅台批价近期有所下降。",
     ["飞天茅台整箱批发价回落至2700元附近。", "业内认为批价波动不影响茅台长期需求。"],
     ["贵州茅台"], "2024-06-10"),
    ("n-fed", "news", "美联储维持利率不变", "联邦基金利率维持在5.25%至5.5%区间。",
     ["美联储宣布维持联邦基金利率目标区间不变。", "点阵图显示年内可能降息一次。"], [], "2024-06-13"),
    ("n-vat", "news", "增值税法草案审议", "增值税（VAT）立法进程推进。",
     ["增值税是对商品和服务在流转过程中产生的增值额征收的税。", "增值税法草案提交审议，税率框架保持不变。"],
     [], "2024-02-27"),
    ("n-apple", "news", "Apple unveils new AI features", "Apple announced Apple Intelligence at WWDC.",
     ["Apple announced Apple Intelligence features for iPhone and Mac.", "The features arrive with iOS 18 later this year."],
     ["Apple"], "2024-06-11"),
    ("n-nvidia", "news", "Nvidia market value tops three trillion", "Nvidia shares rallied on AI demand.",
     ["Nvidia market capitalization passed 3 trillion dollars.", "Data center revenue grew more than 400 percent year over year."],
     ["Nvidia"], "2024-06-06"),
    ("n-tesla", "news", "Tesla deliveries fall in the first quarter", "Tesla delivered fewer cars than expected.",
     ["Tesla delivered 386,810 vehicles in the first quarter.", "Deliveries fell 8.5 percent from a year earlier."],
     ["Tesla"], "2024-04-02"),
    ("m-cpi", "macro", "5月CPI同比上涨0.3%", "国家统计局公布通胀数据。",
     ["5月全国居民消费价格指数同比上涨0.3%，与上月持平。", "核心CPI同比上涨0.6%。"], [], "2024-06-12"),
    ("m-pmi", "macro", "5月制造业PMI为49.5", "制造业景气度小幅回落。",
     ["5月制造业采购经理指数为49.5%，比上月下降0.9个百分点。", "非制造业商务活动指数为51.1%。"], [], "2024-05-31"),
    ("m-gdp", "macro", "一季度GDP同比增长5.3%", "经济开局良好。",
     ["一季度国内生产总值同比增长5.3%。", "最终消费支出对经济增长贡献率为73.7%。"], [], "2024-04-16"),
    ("m-us-cpi", "macro", "US CPI rises 3.3 percent", "Inflation eased slightly in May.",
     ["US consumer prices rose 3.3 percent year over year in May.", "Core inflation was 3.4 percent."], [], "2024-06-12"),
]

MARKET = [
    ("k-600519", "600519", "贵州茅台", [("2024-06-10", 1700.0, 1688.0, 1712.0, 1680.5, 3.1e6),
                                       ("2024-06-11", 1688.0, 1675.2, 1695.0, 1670.0, 2.8e6)]),
    ("k-002594", "002594", "比亚迪", [("2024-06-10", 250.1, 255.3, 257.0, 249.0, 1.9e7)]),
]

QUERIES = [
    {"query": "Is Kweichow Moutai worth holding?", "expect_empty": False},
    {"query": "贵州茅台值得长期持有吗？", "expect_empty": False},
    {"query": "茅台一季度营业收入是多少？", "expect_empty": False},
    {"query": "茅台的估值水平如何？", "expect_empty": False},
    {"query": "飞天茅台批发价最近怎么样？", "expect_empty": False},
    {"query": "比亚迪海外销量如何？", "expect_empty": False},
    {"query": "宁德时代储能业务进展", "expect_empty": False},
    {"query": "招商银行的不良贷款率是多少？", "expect_empty": False},
    {"query": "XiaoMi su7 configurations please", "expect_empty": False},
    {"query": "通义千问有什么优势？", "expect_empty": False},
    {"query": "文心一言用户数有多少？", "expect_empty": False},
    {"query": "美联储最新利率决议", "expect_empty": False},
    {"query": "What is VAT?", "expect_empty": False},
    {"query": "增值税是什么？", "expect_empty": False},
    {"query": "What did Apple announce at WWDC?", "expect_empty": False},
    {"query": "Nvidia market value", "expect_empty": False},
    {"query": "Tesla deliveries in the first quarter", "expect_empty": False},
    {"query": "5月CPI同比涨幅", "expect_empty": False},
    {"query": "制造业PMI是多少？", "expect_empty": False},
    {"query": "一季度GDP增长率", "expect_empty": False},
    {"query": "US CPI inflation in May", "expect_empty": False},
    {"query": "比亚迪股价走势", "expect_empty": False},
    {"query": "zqxv wplk", "expect_empty": True},
    {"query": "量子引力弦论", "expect_empty": True},
    {"query": "glorp frabjous", "expect_empty": True},
]


def make_qa():
    with open(HERE / "qa/docs.jsonl", "w", encoding="utf-8") as f:
        for did, st, title, summary, body, companies, date in DOCS:
            f.write(json.dumps({"id": did, "source_type": st, "title": title, "summary": summary,
                                "body": "\n".join(body), "company_names": companies,
                                "published_at": date + "T00:00:00Z",
                                "url": f"https://example.com/{did}"}, ensure_ascii=False) + "\n")
    with open(HERE / "qa/market.json", "w", encoding="utf-8") as f:
        json.dump([{"id": mid, "symbol": sym, "company": comp,
                    "candles": [dict(zip(["date", "open", "close", "high", "low", "volume"], c)) for c in rows]}
                   for mid, sym, comp, rows in MARKET], f, ensure_ascii=False, indent=1)
        f.write("\n")
    with open(HERE / "qa/queries.json", "w", encoding="utf-8") as f:
        json.dump(QUERIES, f, ensure_ascii=False, indent=1)
        f.write("\n")


ARTICLES = [
    ("a-fin-1", "央行下调存款准备金率", "中国人民银行决定下调金融机构存款准备金率0.5个百分点，释放长期资金约1万亿元。\n此举旨在保持流动性合理充裕。", "2023-09-14"),
    ("a-fin-2", "Fed raises rates", "The Federal Reserve raised its benchmark rate by 25 basis points to a range of 5.25 to 5.5 percent.\nOfficials left the door open to further increases.", "2023-07-26"),
    ("a-tech-1", "国产大模型密集发布", "多家科技公司发布大语言模型产品。\n行业关注模型的推理成本与应用落地。", "2023-08-31"),
]


def make_finfact():
    with open(HERE / "finfact/articles.jsonl", "w", encoding="utf-8") as f:
        for aid, title, body, date in ARTICLES:
            f.write(json.dumps({"id": aid, "source_type": "news", "title": title, "summary": "", "body": body,
                                "published_at": date + "T00:00:00Z"}, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    make_corpus()
    make_labeled()
    make_qa()
    make_finfact()

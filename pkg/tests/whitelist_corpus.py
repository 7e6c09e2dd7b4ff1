"""Curated snippet corpus for whitelist enforcement tests.

VIOLATING: (stage, code, identifiers that must be flagged).
COMPLIANT: (stage, code) built only from stage-allowed entries plus stdlib.
"""

from spio.model import Stage

PRE = Stage.PREPROCESS
FEAT = Stage.FEATURE_ENGINEERING
MODEL = Stage.MODEL_SELECTION
HYPER = Stage.HYPERPARAMETER_TUNING

VIOLATING = [
    (PRE, "import sklearn\nprint(sklearn)\n", {"sklearn"}),
    (PRE, "from sklearn.preprocessing import StandardScaler\n", {"sklearn.preprocessing.StandardScaler"}),
    (PRE, "import xgboost\nmodel = xgboost.XGBClassifier()\n", {"xgboost"}),
    (PRE, "import numpy as np\nimport scipy\n", {"scipy"}),
    (PRE, "import matplotlib.pyplot as plt\nplt.plot([1])\n", {"matplotlib.pyplot"}),
    (PRE, "import numpy, sklearn\n", {"sklearn"}),
    (PRE, "import pandas as pd\nimport seaborn as sns\n", {"seaborn"}),
    (FEAT, "from sklearn.preprocessing import OneHotEncoder\n", {"sklearn.preprocessing.OneHotEncoder"}),
    (FEAT, "from sklearn.ensemble import RandomForestClassifier\n", {"sklearn.ensemble.RandomForestClassifier"}),
    (FEAT, "import torch\nx = torch.zeros(3)\n", {"torch"}),
    (FEAT, "import sklearn.preprocessing as sp\nscaler = sp.Normalizer()\n", {"sklearn.preprocessing.Normalizer"}),
    (FEAT, "from sklearn.preprocessing import *\n", {"sklearn.preprocessing.*"}),
    (FEAT, "from sklearn.feature_selection import SelectKBest\n", {"sklearn.feature_selection.SelectKBest"}),
    (MODEL, "import requests\nrequests.get('http://x')\n", {"requests"}),
    (MODEL, "from sklearn.ensemble import AdaBoostClassifier\n", {"sklearn.ensemble.AdaBoostClassifier"}),
    (MODEL, "from sklearn.svm import SVC\n", {"sklearn.svm.SVC"}),
    (MODEL, "from sklearn.model_selection import GridSearchCV\n", {"sklearn.model_selection.GridSearchCV"}),
    (MODEL, "from sklearn import ensemble\nclf = ensemble.StackingClassifier(estimators=[])\n", {"sklearn.ensemble.StackingClassifier"}),
    (MODEL, "from sklearn.metrics import log_loss\n", {"sklearn.metrics.log_loss"}),
    (MODEL, "from sklearn.linear_model import ElasticNet\n", {"sklearn.linear_model.ElasticNet"}),
    (MODEL, "import statsmodels.api as sm\n", {"statsmodels.api"}),
    (MODEL, "from sklearn.multioutput import MultiOutputRegressor\n", {"sklearn.multioutput.MultiOutputRegressor"}),
    (HYPER, "import lightgbm\n", {"lightgbm"}),
    (HYPER, "from xgboost import XGBRegressor\n", {"xgboost.XGBRegressor"}),
    (HYPER, "import optuna\nstudy = optuna.create_study()\n", {"optuna"}),
    (HYPER, "from sklearn.model_selection import RandomizedSearchCV\n", {"sklearn.model_selection.RandomizedSearchCV"}),
    (HYPER, "from sklearn.svm import SVR\n", {"sklearn.svm.SVR"}),
]

COMPLIANT = [
    (PRE, "import numpy as np\nimport pandas as pd\ndf = pd.read_csv('x.csv')\n"),
    (PRE, "import csv\nimport json\nimport time\nrows = list(csv.reader(open('x.csv')))\n"),
    (PRE, "import pandas as pd\ndf = pd.read_csv('a.csv')\ndf.to_csv('b.csv', index=False)\n"),
    (PRE, "import os\nimport sys\nimport math\nimport pandas as pd\nprint(math.sqrt(2))\n"),
    (PRE, "from pandas import read_csv\nframe = read_csv('x.csv')\n"),
    (PRE, "import numpy\nnumpy.random.seed(0)\nvalues = numpy.zeros(4)\n"),
    (FEAT, "from sklearn.impute import SimpleImputer\nimp = SimpleImputer()\n"),
    (FEAT, "from sklearn.preprocessing import StandardScaler, MinMaxScaler\n"),
    (FEAT, "from sklearn.preprocessing import PolynomialFeatures\nimport warnings\nwarnings.filterwarnings('ignore')\n"),
    (FEAT, "from sklearn.preprocessing import LabelEncoder, RobustScaler\n"),
    (FEAT, "import sklearn.preprocessing as sp\nscaler = sp.StandardScaler()\n"),
    (FEAT, "import pandas as pd\nimport numpy as np\narr = np.log1p(pd.Series([1, 2]))\n"),
    (MODEL, "from sklearn.ensemble import RandomForestClassifier\nclf = RandomForestClassifier()\n"),
    (MODEL, "from sklearn.linear_model import LogisticRegression, Ridge\n"),
    (MODEL, "from sklearn.model_selection import train_test_split\nfrom sklearn.metrics import accuracy_score\n"),
    (MODEL, "from sklearn.pipeline import Pipeline\nfrom sklearn.compose import ColumnTransformer\n"),
    (MODEL, "from sklearn.preprocessing import OneHotEncoder\nenc = OneHotEncoder()\n"),
    (MODEL, "from sklearn.multioutput import MultiOutputClassifier\n"),
    (MODEL, "from sklearn.metrics import roc_auc_score, mean_squared_error\n"),
    (MODEL, "from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor\n"),
    (MODEL, "from sklearn.linear_model import Lasso, LinearRegression\n"),
    (MODEL, "from sklearn.metrics import classification_report, mean_absolute_error, r2_score\n"),
    (HYPER, "from sklearn.model_selection import GridSearchCV\nsearch = GridSearchCV(None, {})\n"),
    (HYPER, "from sklearn.svm import SVC\nclf = SVC()\n"),
    (HYPER, "from xgboost import XGBClassifier\nclf = XGBClassifier()\n"),
    (HYPER, "from sklearn.impute import SimpleImputer\nfrom sklearn.model_selection import GridSearchCV\n"),
    (HYPER, "import time\nstart = time.time()\nprint(time.time() - start)\n"),
]

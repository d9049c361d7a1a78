#include "spider.h"
int main(){return 0;}
